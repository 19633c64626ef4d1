"""Coupling criteria for Levy triplets.

Sufficient conditions checked here:

* a non-degenerate Gaussian part;
* some convolution power of the truncated Levy measure has an absolutely
  continuous component (in the atoms-plus-grid representation, the grid
  part *is* the absolutely continuous part);
* a convolution power overlaps uniformly with its small shifts.

For a finite, purely atomic Levy measure without Gaussian part no power is
ever absolutely continuous and the process cannot couple.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BudgetExceeded, SchemaError
from .measure import (
    DEFAULT_BUDGET,
    MixedMeasure,
    as_point,
    convolution_power,
    from_dict as measure_from_dict,
    meet_mass,
    normalize,
    shift,
    to_dict as measure_to_dict,
    truncate_levy,
)

POSITIVE = 1e-12
PSD_TOL = 1e-10
DEFAULT_DELTA = 0.5
DEFAULT_DEPTH = 6


class Verdict(str, enum.Enum):
    COUPLING = "Coupling"
    NO_COUPLING = "NoCoupling"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True, eq=False)
class LevyTriplet:
    drift: np.ndarray
    gaussian: np.ndarray
    levy: MixedMeasure
    cutoff: float = 1.0
    infinite_activity: bool = False

    def __post_init__(self):
        d = self.levy.dim
        try:
            drift = as_point(self.drift, d)
        except ValueError as exc:
            raise ValueError(f"drift: {exc}") from exc
        Q = np.atleast_2d(np.asarray(self.gaussian, dtype=float))
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "gaussian", Q)
        if Q.shape != (d, d):
            raise ValueError(f"gaussian: expected a {d}x{d} matrix, got shape {Q.shape}")
        if not np.all(np.isfinite(Q)) or np.max(np.abs(Q - Q.T), initial=0.0) > PSD_TOL:
            raise ValueError("gaussian: matrix must be finite and symmetric")
        if np.linalg.eigvalsh(Q).min() < -PSD_TOL:
            raise ValueError("gaussian: matrix must be positive semi-definite")
        if not self.cutoff > 0:
            raise ValueError("cutoff: must be positive")
        if self.levy.total_mass > 0:
            try:
                truncate_levy(self.levy, self.cutoff, self.infinite_activity)
            except ValueError as exc:
                raise ValueError(f"levy: {exc}") from exc
        elif not (np.any(Q != 0) or np.any(drift != 0)):
            raise ValueError("levy: zero Levy measure with zero drift and zero gaussian part")

    @property
    def dim(self) -> int:
        return self.levy.dim

    @property
    def gaussian_rank(self) -> int:
        return int(np.sum(np.linalg.eigvalsh(self.gaussian) > PSD_TOL))

    @property
    def has_gaussian(self) -> bool:
        return bool(np.any(np.abs(self.gaussian) > PSD_TOL))

    def truncated(self, eps: Optional[float] = None) -> MixedMeasure:
        return truncate_levy(self.levy, self.cutoff if eps is None else eps, self.infinite_activity)

    @classmethod
    def from_dict(cls, data) -> "LevyTriplet":
        """Parse ``{"levy": <measure>, "drift", "gaussian", "cutoff", "infinite_activity"}``."""
        if not isinstance(data, dict):
            raise SchemaError("triplet must be a JSON object")
        if "levy" not in data:
            raise SchemaError("levy: field is required")
        try:
            levy = measure_from_dict(data["levy"])
        except SchemaError as exc:
            raise SchemaError(f"levy: {exc}") from exc
        except ValueError as exc:
            raise ValueError(f"levy: {exc}") from exc
        d = levy.dim
        try:
            drift = np.asarray(data.get("drift", [0.0] * d), dtype=float)
            gaussian = np.asarray(data.get("gaussian", np.zeros((d, d)).tolist()), dtype=float)
            cutoff = float(data.get("cutoff", 1.0))
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"malformed triplet field: {exc!r}") from exc
        return cls(drift=drift, gaussian=gaussian, levy=levy, cutoff=cutoff,
                   infinite_activity=bool(data.get("infinite_activity", False)))

    def to_dict(self) -> dict:
        return {
            "drift": self.drift.tolist(),
            "gaussian": self.gaussian.tolist(),
            "levy": measure_to_dict(self.levy),
            "cutoff": self.cutoff,
            "infinite_activity": self.infinite_activity,
        }


@dataclass
class CriterionReport:
    eta0: Optional[float]
    delta: float
    eps: float
    grid_step: float
    th22_holds: bool
    verdict: Verdict = Verdict.INCONCLUSIVE
    witness: str = ""
    ex2_cond1: Optional[tuple] = None  # (l, ac_mass)
    ex2_cond2: Optional[tuple] = None  # (l, delta, infimum)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "witness": self.witness,
            "eta0": self.eta0,
            "delta": self.delta,
            "eps": self.eps,
            "grid_step": self.grid_step,
            "th22_holds": self.th22_holds,
            "ex2_cond1": None if self.ex2_cond1 is None else
            {"l": self.ex2_cond1[0], "ac_mass": self.ex2_cond1[1]},
            "ex2_cond2": None if self.ex2_cond2 is None else
            {"l": self.ex2_cond2[0], "delta": self.ex2_cond2[1], "infimum": self.ex2_cond2[2]},
            "notes": list(self.notes),
        }


def default_grid_step(nu: MixedMeasure, delta: float, divisions: int = 32) -> float:
    """``delta / divisions``, rounded to a multiple of the density spacing if any.

    Shifts of a grid density are only comparable with the original on its
    own lattice.
    """
    step = delta / divisions
    if nu.density is None:
        return step
    h = nu.density.spacing
    if h > delta * (1 + 1e-12):
        raise ValueError(f"grid_step: density spacing {h:g} exceeds delta = {delta:g}")
    k = max(1, int(round(step / h)))
    while k > 1 and k * h > delta * (1 + 1e-12):
        k -= 1
    return k * h


def displacement_grid(dim: int, delta: float, grid_step: float) -> np.ndarray:
    """Lattice points ``x`` with ``|x| <= delta`` and first nonzero coordinate >= 0.

    Overlap is symmetric under ``x -> -x``, so half the ball suffices.
    """
    if not 0 < grid_step <= delta:
        raise ValueError("grid_step must lie in (0, delta]")
    K = int(math.floor(delta / grid_step + 1e-9))
    axes = [np.arange(-K, K + 1)] * dim
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    pts = pts[np.sum(pts.astype(float) ** 2, axis=1) * grid_step**2 <= delta**2 * (1 + 1e-12)]
    nz = pts != 0
    first = np.where(nz.any(axis=1), pts[np.arange(len(pts)), np.argmax(nz, axis=1)], 0)
    return pts[first >= 0] * grid_step


def _atomic_probe(nu0: MixedMeasure, delta: float) -> Optional[np.ndarray]:
    """A displacement ``|x| <= delta`` avoiding every atom difference, if cheap to find."""
    locs = nu0.atomic.locations
    k = len(locs)
    if k == 0 or k > 3000:
        return None
    diffs = (locs[:, None, :] - locs[None, :, :]).reshape(-1, nu0.dim)
    e = np.zeros(nu0.dim)
    for j in range(1, 200):
        t = delta * math.modf(j * 0.6180339887498949)[0]
        if t <= 0:
            continue
        e[0] = t
        if np.min(np.max(np.abs(diffs - e), axis=1)) > 1e-6:
            return e.copy()
    return None


def overlap_profile(nu0: MixedMeasure, delta: float, grid_step: float):
    """Overlap masses ``(nu0 meet delta_x * nu0)(R^d)`` over the displacement grid.

    For purely atomic ``nu0`` one extra displacement avoiding all atom
    differences is appended: there the overlap is exactly zero, which is the
    true infimum over the continuum.
    """
    xs = displacement_grid(nu0.dim, delta, grid_step)
    if nu0.is_atomic:
        probe = _atomic_probe(nu0, delta)
        if probe is not None:
            xs = np.vstack([xs, probe])
    vals = np.array([meet_mass(nu0, shift(nu0, x)) for x in xs])
    return xs, vals


def eta0(nu0: MixedMeasure, delta: float, grid_step: float) -> float:
    """Grid minimum of ``(nu0 meet delta_x * nu0)(R^d)`` over ``|x| <= delta``.

    This upper-bounds the infimum over the continuum ball; it is exact when
    the overlap is minimized on the grid.
    """
    _, vals = overlap_profile(nu0, delta, grid_step)
    return float(vals.min())


def check_th22(triplet: LevyTriplet, eps: Optional[float] = None, delta: float = DEFAULT_DELTA,
               grid_step: Optional[float] = None) -> CriterionReport:
    """Uniform overlap of the truncated Levy measure with its shifts up to ``delta``."""
    eps = triplet.cutoff if eps is None else eps
    nu_eps = triplet.truncated(eps)
    nu0, _ = normalize(nu_eps)
    grid_step = default_grid_step(nu0, delta) if grid_step is None else grid_step
    e0 = eta0(nu0, delta, grid_step)
    holds = e0 > POSITIVE
    report = CriterionReport(eta0=e0, delta=delta, eps=eps, grid_step=grid_step, th22_holds=holds)
    if holds:
        report.verdict = Verdict.COUPLING
        report.witness = f"th22: eta0 = {e0:.6g} on grid step {grid_step:g}"
    return report


def ac_mass_of_power(nu_eps: MixedMeasure, l: int) -> float:
    """Mass of the absolutely continuous part of ``nu_eps^{*l}``.

    Atoms convolve to atoms and every term touching the grid density is
    absolutely continuous, so it is ``lambda^l - (atomic mass)^l``.
    """
    if l < 1:
        raise ValueError("l must be at least 1")
    lam = nu_eps.total_mass
    atomic = nu_eps.atomic_mass
    return max(0.0, lam**l - atomic**l)


def check_ex2_cond2(nu_eps: MixedMeasure, l: int, delta: float, grid_step: float,
                    budget: int = DEFAULT_BUDGET) -> float:
    """Grid infimum of the overlap of normalized ``nu_eps^{*l}`` with its shifts."""
    if l < 1:
        raise ValueError("l must be at least 1")
    nu0, _ = normalize(nu_eps)
    return eta0(convolution_power(nu0, l, budget=budget), delta, grid_step)


def decide_coupling_property(triplet: LevyTriplet, search_depth: int = DEFAULT_DEPTH, *,
                             delta: float = DEFAULT_DELTA, grid_step: Optional[float] = None,
                             eps: Optional[float] = None,
                             budget: int = DEFAULT_BUDGET) -> CriterionReport:
    eps = triplet.cutoff if eps is None else eps
    if grid_step is None:
        grid_step = (default_grid_step(triplet.truncated(eps), delta)
                     if triplet.levy.total_mass > 0 else delta / 32)
    report = CriterionReport(eta0=None, delta=delta, eps=eps, grid_step=grid_step, th22_holds=False)

    if triplet.gaussian_rank == triplet.dim:
        report.verdict = Verdict.COUPLING
        report.witness = "gaussian: non-degenerate Gaussian part, transition laws are absolutely continuous"
        if triplet.levy.total_mass == 0:
            return report
    elif triplet.has_gaussian:
        report.notes.append(
            f"Gaussian part has rank {triplet.gaussian_rank} < {triplet.dim}; not used as a witness")

    if triplet.levy.total_mass == 0:
        if not triplet.has_gaussian:
            report.verdict = Verdict.NO_COUPLING
            report.witness = "no jumps and no diffusion: deterministic translation"
        else:
            report.notes.append("no jump part; degenerate Gaussian part alone is not decided")
        return report

    nu_eps = triplet.truncated(eps)
    nu0, _ = normalize(nu_eps)
    report.eta0 = eta0(nu0, delta, grid_step)
    report.th22_holds = report.eta0 > POSITIVE
    if report.verdict is Verdict.COUPLING:
        return report

    for l in range(1, search_depth + 1):
        ac = ac_mass_of_power(nu_eps, l)
        if ac > POSITIVE:
            report.ex2_cond1 = (l, ac)
            report.verdict = Verdict.COUPLING
            report.witness = f"ex2(1): nu_eps^{{*{l}}} has absolutely continuous mass {ac:.6g}"
            return report

    if nu_eps.is_atomic:
        # finitely many atoms: a shift avoiding every atom difference kills
        # the overlap of every power, so condition (2) fails for all l
        report.ex2_cond2 = (1, delta, report.eta0)
    else:
        for l in range(1, search_depth + 1):
            try:
                val = check_ex2_cond2(nu_eps, l, delta, grid_step, budget)
            except BudgetExceeded as exc:
                report.notes.append(f"ex2(2) search stopped at l = {l}: {exc}")
                break
            report.ex2_cond2 = (l, delta, val)
            if val > POSITIVE:
                report.verdict = Verdict.COUPLING
                report.witness = f"ex2(2): overlap infimum {val:.6g} for l = {l}"
                return report

    finite = not triplet.infinite_activity
    if not triplet.has_gaussian and finite and triplet.levy.is_atomic:
        report.verdict = Verdict.NO_COUPLING
        report.witness = ("compound Poisson with purely atomic Levy measure: no convolution "
                          "power has an absolutely continuous component")
    else:
        report.witness = "no sufficient condition verified; no converse available"
    return report
