"""Closed-form total-variation bounds and decay-rate fitting.

The constants in these bounds exist but are not explicit; every constant
used here is calibrated from exact computations and reported as such.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .errors import InsufficientData
from .measure import MixedMeasure, as_point, convolve, dirac, shift, tv_distance
from .semigroup import DEFAULT_TOL, build_series, cp_tv

RATE_FLOOR = 1e-13


def couplingo2_bound(rate: float, t: float, c_xy: float, x_equals_y: bool) -> float:
    """``2 e^{-lam t} (1 - [x = y]) + sqrt(2) C(x, y) (1 - e^{-lam t}) / sqrt(lam t)``, capped at 2."""
    if not (rate > 0 and t > 0):
        raise ValueError("rate and t must be positive")
    if c_xy < 0:
        raise ValueError("c_xy must be nonnegative")
    mu = rate * t
    jump = 0.0 if x_equals_y else 2.0 * math.exp(-mu)
    return min(2.0, jump + math.sqrt(2.0) * c_xy * (-math.expm1(-mu)) / math.sqrt(mu))


def jensen_chain_check(rate: float, t: float, rel_tol: float = 1e-15):
    """Both sides of ``sum_{n>=1} mu^n / (sqrt(n) n!) <= sqrt(2) (e^mu - 1) / sqrt(mu)``.

    The left side is summed in the log domain up to an order past which
    the terms decay geometrically; the geometric bound on the remainder is
    added, so ``lhs`` is an upper estimate of the full series.
    """
    mu = rate * t
    if not 0 < mu < 700:
        raise ValueError("rate * t must lie in (0, 700)")
    N = int(math.ceil(mu + 40 * math.sqrt(mu) + 40))
    n = np.arange(1, N + 1, dtype=float)
    log_terms = n * math.log(mu) - special.gammaln(n + 1) - 0.5 * np.log(n)
    partial = float(np.exp(special.logsumexp(log_terms)))
    # terms n > N shrink at least by the factor mu / (N + 2) each
    ratio = mu / (N + 2)
    next_term = math.exp((N + 1) * math.log(mu) - special.gammaln(N + 2) - 0.5 * math.log(N + 1))
    remainder = next_term / (1.0 - ratio)
    lhs = partial + remainder
    rhs = math.sqrt(2.0) * math.expm1(mu) / math.sqrt(mu)
    return lhs, rhs


def th2_bound(t: float, x, y, c: float) -> float:
    """``min(2, c (1 + |x - y|) / sqrt(t))``."""
    if c < 0:
        raise ValueError("c must be nonnegative")
    if t <= 0:
        return 2.0
    dist = float(np.linalg.norm(np.atleast_1d(np.asarray(x, float) - np.asarray(y, float))))
    return min(2.0, c * (1.0 + dist) / math.sqrt(t))


def empirical_c_xy(step_law: MixedMeasure, x, y, n_max: int = 200) -> float:
    """``max_{1 <= n <= n_max} sqrt(n) ||P(x + S_n) - P(y + S_n)||_var`` (exact laws)."""
    d = step_law.dim
    dx = as_point(y, d) - as_point(x, d)
    p = dirac(np.zeros(d))
    best = 0.0
    for n in range(1, n_max + 1):
        p = convolve(p, step_law)
        best = max(best, math.sqrt(n) * tv_distance(p, shift(p, dx)))
    return best


def calibrate_th2_constant(step_law: MixedMeasure, rate: float, displacements: Sequence[float],
                           times: Sequence[float], tol: float = DEFAULT_TOL) -> float:
    """Smallest ``c`` with ``th2_bound >= cp_tv`` upper end over the given family.

    Displacements are along the first axis.
    """
    d = step_law.dim
    c = 0.0
    for t in times:
        series = build_series(step_law, rate, t, tol, cache_budget=0)
        for r in displacements:
            y = np.zeros(d)
            y[0] = r
            _, upper = cp_tv(series, np.zeros(d), y)
            c = max(c, upper * math.sqrt(t) / (1.0 + abs(r)))
    return c


@dataclass(frozen=True)
class RateFit:
    times: tuple
    values: tuple
    slope: float
    intercept: float
    r_squared: float
    n_excluded: int = 0

    @property
    def no_decay(self) -> bool:
        return self.slope > -0.05

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "n_points": len(self.times),
            "n_excluded": self.n_excluded,
            "no_decay": self.no_decay,
        }


def fit_rate(times: Sequence[float], values: Sequence[float], floor: float = RATE_FLOOR,
             min_points: int = 5, min_decades: float = 2.0) -> RateFit:
    """Least-squares line through ``(log t, log value)``.

    Values at or below ``floor`` are excluded (and counted).  The slope is
    the decay exponent estimate.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape:
        raise ValueError("times and values must have equal length")
    keep = (v > floor) & (t > 0) & np.isfinite(v)
    t_k, v_k = t[keep], v[keep]
    if len(t_k) < min_points:
        raise InsufficientData(f"need at least {min_points} usable points, got {len(t_k)}")
    if math.log10(t_k.max() / t_k.min()) < min_decades - 1e-12:
        raise InsufficientData(f"times must span at least {min_decades:g} decades")
    lx, ly = np.log(t_k), np.log(v_k)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    if ss_tot <= 1e-30:
        r2 = 1.0 if ss_res <= 1e-30 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return RateFit(tuple(t_k.tolist()), tuple(v_k.tolist()), float(slope), float(intercept),
                   float(r2), int((~keep).sum()))
