"""Command-line interface: ``levycoupling {check,tv,couple,rate}``.

Every artifact (CSV or JSON) embeds the tool version, the seed and an echo
of the full configuration.  CSV files start with ``#`` metadata lines
followed by a header row; floats are written with ``repr`` so reruns are
byte-identical.

Exit codes::

    0  success / Coupling         4  Inconclusive
    1  parse error                5  budget exceeded
    2  invariant violation        6  degenerate overlap
    3  NoCoupling                 7  insufficient data
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import __version__
from .bounds import couplingo2_bound, empirical_c_xy, fit_rate, th2_bound
from .coupling import DEFAULT_MAX_STEPS, build_mineka, estimate_tl_tail, sample_t_l, subordinated_tail
from .criteria import DEFAULT_DELTA, DEFAULT_DEPTH, LevyTriplet, Verdict, decide_coupling_property
from .errors import (
    BudgetExceeded,
    DegenerateOverlap,
    InsufficientData,
    LevyCouplingError,
    SchemaError,
)
from .measure import DEFAULT_BUDGET, normalize
from .semigroup import DEFAULT_TOL, build_series, cp_tv, series_tv_bound

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_INVARIANT = 2
EXIT_NO_COUPLING = 3
EXIT_INCONCLUSIVE = 4
EXIT_BUDGET = 5
EXIT_DEGENERATE = 6
EXIT_INSUFFICIENT = 7

VERDICT_EXIT = {
    Verdict.COUPLING: EXIT_OK,
    Verdict.NO_COUPLING: EXIT_NO_COUPLING,
    Verdict.INCONCLUSIVE: EXIT_INCONCLUSIVE,
}

# above this many Poisson terms the exact tail column of `couple` is skipped
_EXACT_TAIL_MAX_MU = 1e5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    command: str
    input_path: Optional[str] = None
    output_path: Optional[str] = None
    summary_path: Optional[str] = None
    seed: int = 0
    workers: int = 1
    tol: float = DEFAULT_TOL
    t_grid: Optional[list] = None
    delta: float = DEFAULT_DELTA
    eps: Optional[float] = None
    grid_step: Optional[float] = None
    search_depth: int = DEFAULT_DEPTH
    x: Optional[list] = None
    y: Optional[list] = None
    displacement: Optional[list] = None
    samples: int = 100_000
    chunk_size: int = 10_000
    max_steps: int = DEFAULT_MAX_STEPS
    fixed_ts: Optional[int] = None
    c_nmax: int = 200
    th2_c: Optional[float] = None
    column: Optional[str] = None
    budget: int = DEFAULT_BUDGET

    def validate(self):
        if not 0 <= self.seed < 2**64:
            raise CliError(EXIT_INVARIANT, "seed: must be a 64-bit unsigned integer")
        positive_ints = ("workers", "search_depth", "samples", "chunk_size", "max_steps", "c_nmax", "budget")
        for name in positive_ints:
            if getattr(self, name) < 1:
                raise CliError(EXIT_INVARIANT, f"{name}: must be a positive integer")
        if not 0 < self.tol < 1:
            raise CliError(EXIT_INVARIANT, "tol: must lie in (0, 1)")
        for name in ("delta", "eps", "grid_step"):
            v = getattr(self, name)
            if v is not None and not (v > 0 and math.isfinite(v)):
                raise CliError(EXIT_INVARIANT, f"{name}: must be positive")
        if self.grid_step is not None and self.grid_step > self.delta:
            raise CliError(EXIT_INVARIANT, "grid_step: must not exceed delta")
        if self.t_grid is not None and any(not (t > 0 and math.isfinite(t)) for t in self.t_grid):
            raise CliError(EXIT_INVARIANT, "t_grid: times must be positive")
        if self.fixed_ts is not None and self.fixed_ts < 1:
            raise CliError(EXIT_INVARIANT, "fixed_ts: must be a positive integer")
        if self.th2_c is not None and self.th2_c < 0:
            raise CliError(EXIT_INVARIANT, "th2_c: must be nonnegative")
        return self


# ---------------------------------------------------------------------------
# I/O helpers


def _floats(text: str) -> list:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _header(config: RunConfig) -> dict:
    return {"tool": "levycoupling", "version": __version__, "seed": config.seed,
            "config": asdict(config)}


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=True) + "\n"


def _write(text: str, path: Optional[str], stream=None):
    if path is None:
        (stream or sys.stdout).write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _csv_text(config: RunConfig, columns: list, rows: list, extra_meta: dict = None) -> str:
    buf = io.StringIO()
    head = _header(config)
    buf.write(f"# tool: levycoupling {head['version']}\n")
    buf.write(f"# seed: {config.seed}\n")
    buf.write("# config: " + json.dumps(head["config"], sort_keys=True) + "\n")
    for key, value in (extra_meta or {}).items():
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _load_json(path: Optional[str]):
    if path is None:
        raise CliError(EXIT_PARSE, "input: --input is required")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(EXIT_PARSE, f"input: cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_PARSE, f"input: malformed JSON at line {exc.lineno} "
                                   f"column {exc.colno}: {exc.msg}") from exc


def _load_triplet(config: RunConfig) -> LevyTriplet:
    data = _load_json(config.input_path)
    try:
        return LevyTriplet.from_dict(data)
    except SchemaError as exc:
        raise CliError(EXIT_PARSE, str(exc)) from exc
    except ValueError as exc:
        raise CliError(EXIT_INVARIANT, str(exc)) from exc


def _jump_law(triplet: LevyTriplet, config: RunConfig):
    """Normalized truncated Levy measure and its total mass (the jump rate)."""
    eps = triplet.cutoff if config.eps is None else config.eps
    nu_eps = triplet.truncated(eps)
    return normalize(nu_eps)


def _point(values, dim: int, name: str) -> np.ndarray:
    p = np.asarray(values, dtype=float)
    if p.shape != (dim,):
        raise CliError(EXIT_INVARIANT, f"{name}: expected {dim} coordinates, got {p.size}")
    return p


# ---------------------------------------------------------------------------
# subcommands


def cmd_check(config: RunConfig) -> int:
    triplet = _load_triplet(config)
    try:
        report = decide_coupling_property(triplet, config.search_depth, delta=config.delta,
                                          grid_step=config.grid_step, eps=config.eps,
                                          budget=config.budget)
    except ValueError as exc:
        raise CliError(EXIT_INVARIANT, str(exc)) from exc
    out = _header(config)
    out.update(report.to_dict())
    _write(_dump_json(out), config.output_path)
    return VERDICT_EXIT[report.verdict]


def cmd_tv(config: RunConfig) -> int:
    if config.t_grid is None:
        raise CliError(EXIT_PARSE, "t_grid: --t-grid is required")
    if config.x is None or config.y is None:
        raise CliError(EXIT_PARSE, "x, y: --x and --y are required")
    triplet = _load_triplet(config)
    nu0, rate = _jump_law(triplet, config)
    x = _point(config.x, nu0.dim, "x")
    y = _point(config.y, nu0.dim, "y")
    same = bool(np.array_equal(x, y))
    c_xy = empirical_c_xy(nu0, x, y, config.c_nmax)

    rows, code, stop_msg = [], EXIT_OK, None
    for t in config.t_grid:
        try:
            series = build_series(nu0, rate, t, config.tol, budget=config.budget)
            lower, upper = cp_tv(series, x, y)
            sb = series_tv_bound(series, x, y)
        except BudgetExceeded as exc:
            reached = rows[-1][0] if rows else 0.0
            code = EXIT_BUDGET
            stop_msg = f"budget exceeded at t={t!r}; achieved t={reached!r}: {exc}"
            break
        rows.append([t, lower, upper, sb, couplingo2_bound(rate, t, c_xy, same)])

    if config.th2_c is not None:
        c_th2, c_label = config.th2_c, "user-supplied"
    else:
        c_th2 = max([r[2] * math.sqrt(r[0]) / (1.0 + float(np.linalg.norm(x - y))) for r in rows],
                    default=0.0)
        c_label = "empirical (self-calibrated on this grid)"
    for r in rows:
        r.append(th2_bound(r[0], x, y, c_th2))

    meta = {
        "rate": repr(rate),
        "c_xy": f"{c_xy!r} empirical (max over n <= {config.c_nmax} of sqrt(n) TV)",
        "th2_c": f"{c_th2!r} {c_label}",
    }
    if triplet.has_gaussian:
        meta["note"] = "Gaussian part present: columns bound the full process from above"
    if stop_msg:
        meta["status"] = stop_msg
    text = _csv_text(config, ["t", "tv_lower", "tv_upper", "series_bound",
                              "couplingo2_bound", "th2_bound"], rows, meta)
    _write(text, config.output_path)
    if stop_msg:
        print(stop_msg, file=sys.stderr)
    return code


def cmd_couple(config: RunConfig) -> int:
    if config.t_grid is None:
        raise CliError(EXIT_PARSE, "t_grid: --t-grid is required")
    triplet = _load_triplet(config)
    nu0, rate = _jump_law(triplet, config)

    summary = _header(config)
    summary["rate"] = rate
    if config.fixed_ts is not None:
        stay = 0.0
        summary["law"] = {"fixed_ts": config.fixed_ts}
    else:
        if config.displacement is not None:
            a = _point(config.displacement, nu0.dim, "displacement")
        elif config.x is not None and config.y is not None:
            a = _point(config.y, nu0.dim, "y") - _point(config.x, nu0.dim, "x")
        else:
            raise CliError(EXIT_PARSE, "displacement: --displacement (or --x and --y) is required")
        law = build_mineka(nu0, a)
        stay = law.stay_prob
        summary["law"] = {"step": law.step, "p_plus": law.p_plus, "p_minus": law.p_minus,
                          "p_zero": law.p_zero}

    t_l, censored = sample_t_l(stay, rate, config.samples, config.seed, workers=config.workers,
                               chunk_size=config.chunk_size, max_steps=config.max_steps,
                               fixed_ts=config.fixed_ts)
    est = estimate_tl_tail(t_l, censored, config.t_grid)
    rows = [[e.t, e.p_hat, e.stderr, e.n_censored] for e in est]

    checks = []
    for e in est:
        item = {"t": e.t, "p_hat": e.p_hat, "stderr": e.stderr}
        if config.fixed_ts is not None:
            item["exact"] = _gamma_tail(config.fixed_ts, rate, e.t)
        elif rate * e.t <= _EXACT_TAIL_MAX_MU:
            lo, hi = subordinated_tail(stay, rate, e.t)
            item["exact"] = 0.5 * (lo + hi)
        if "exact" in item:
            item["z"] = (e.p_hat - item["exact"]) / e.stderr if e.stderr > 0 else None
        checks.append(item)
    summary.update({"n_samples": config.samples, "n_censored": int(censored.sum()),
                    "tail_check": checks})

    _write(_csv_text(config, ["t", "p_hat_TL_gt_t", "stderr", "n_censored"], rows),
           config.output_path)
    summary_path = config.summary_path
    if summary_path is None and config.output_path is not None:
        summary_path = config.output_path + ".summary.json"
    _write(_dump_json(summary), summary_path, stream=sys.stderr)
    return EXIT_OK


def _gamma_tail(k: int, rate: float, t: float) -> float:
    from scipy import special
    return float(special.gammaincc(k, rate * t))


def _read_csv(path: Optional[str]):
    if path is None:
        raise CliError(EXIT_PARSE, "input: --input is required")
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    except OSError as exc:
        raise CliError(EXIT_PARSE, f"input: cannot read {path}: {exc.strerror}") from exc
    reader = csv.DictReader(lines)
    return reader.fieldnames or [], list(reader)


def cmd_rate(config: RunConfig) -> int:
    fields, records = _read_csv(config.input_path)
    if "t" not in fields:
        raise CliError(EXIT_PARSE, "input: CSV has no 't' column")
    column = config.column
    if column is None:
        column = next((c for c in ("tv_upper", "p_hat_TL_gt_t", "value") if c in fields), None)
        if column is None:
            raise CliError(EXIT_PARSE, "column: no value column found; pass --column")
    elif column not in fields:
        raise CliError(EXIT_PARSE, f"column: {column!r} not in CSV header")
    try:
        times = [float(r["t"]) for r in records]
        values = [float(r[column]) for r in records]
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_PARSE, f"input: non-numeric entry: {exc}") from exc
    try:
        fit = fit_rate(times, values)
    except InsufficientData as exc:
        raise CliError(EXIT_INSUFFICIENT, str(exc)) from exc
    out = _header(config)
    out.update(fit.to_dict())
    out["column"] = column
    _write(_dump_json(out), config.output_path)
    return EXIT_OK


COMMANDS = {"check": cmd_check, "tv": cmd_tv, "couple": cmd_couple, "rate": cmd_rate}


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--input", dest="input_path", help="triplet JSON (check, tv, couple) or CSV (rate)")
    common.add_argument("--output", dest="output_path", help="output file (default: stdout)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--tol", type=float, default=DEFAULT_TOL, help="Poisson truncation tolerance")
    common.add_argument("--t-grid", dest="t_grid", type=_floats, help="comma-separated times")
    common.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    common.add_argument("--eps", type=float, help="truncation radius (default: triplet cutoff)")
    common.add_argument("--grid-step", dest="grid_step", type=float)
    common.add_argument("--depth", dest="search_depth", type=int, default=DEFAULT_DEPTH)
    common.add_argument("--x", type=_floats, help="start point, comma-separated coordinates")
    common.add_argument("--y", type=_floats, help="second start point")
    common.add_argument("--displacement", type=_floats, help="Mineka displacement a")
    common.add_argument("--samples", type=int, default=100_000)
    common.add_argument("--chunk-size", dest="chunk_size", type=int, default=10_000)
    common.add_argument("--max-steps", dest="max_steps", type=int, default=DEFAULT_MAX_STEPS)
    common.add_argument("--fixed-ts", dest="fixed_ts", type=int,
                        help="replace the walk coupling time by a constant (testing stub)")
    common.add_argument("--summary", dest="summary_path", help="couple: JSON summary path")
    common.add_argument("--c-nmax", dest="c_nmax", type=int, default=200)
    common.add_argument("--th2-c", dest="th2_c", type=float)
    common.add_argument("--column", help="rate: value column to fit")
    common.add_argument("--budget", type=int, default=DEFAULT_BUDGET,
                        help="max atoms/cells in any convolution")

    parser = _Parser(prog="levycoupling", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"levycoupling {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "check": "decide the coupling property of a Levy triplet",
        "tv": "exact compound Poisson total variation and bounds over a time grid",
        "couple": "Monte Carlo tail of the coupling time",
        "rate": "fit a log-log decay rate to a tv or couple CSV",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return int(exc.code or 0)
    config = RunConfig(**vars(args))
    try:
        config.validate()
        return COMMANDS[config.command](config)
    except CliError as exc:
        print(f"levycoupling {config.command}: {exc}", file=sys.stderr)
        return exc.code
    except DegenerateOverlap as exc:
        print(f"levycoupling {config.command}: displacement: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except BudgetExceeded as exc:
        print(f"levycoupling {config.command}: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (LevyCouplingError, ValueError) as exc:
        print(f"levycoupling {config.command}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
