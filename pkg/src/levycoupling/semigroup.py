"""Random-walk laws and the compound Poisson transition semigroup.

The compound Poisson semigroup with jump intensity ``lam`` and jump law
``nu0`` is the Poisson mixture

    P_t(x, .) = sum_n  w_n(lam t) * (delta_x * nu0^{*n}),
    w_n(mu)   = exp(-mu) mu^n / n!,

which is evaluated exactly up to a truncation order ``N``; the discarded
Poisson tail is carried along as a certified error term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy import special

from .errors import BudgetExceeded
from .measure import (
    DEFAULT_BUDGET,
    MeasureAccumulator,
    MixedMeasure,
    as_point,
    convolution_power,
    convolve,
    dirac,
    shift,
    tv_distance,
)

DEFAULT_TOL = 1e-8
# atoms/cells kept in the powers cache before falling back to recomputation
CACHE_BUDGET = 2_000_000


def poisson_weights(mu: float, n_max: int) -> np.ndarray:
    """``exp(-mu) mu^n / n!`` for ``n = 0..n_max``.

    Forward recurrence from ``exp(-mu)``; for ``mu > 700`` the starting value
    underflows, so the weights are evaluated in the log domain instead.
    """
    if mu < 0:
        raise ValueError("Poisson mean must be nonnegative")
    n = np.arange(n_max + 1)
    if mu == 0:
        return (n == 0).astype(float)
    if mu > 700:
        return np.exp(n * math.log(mu) - mu - special.gammaln(n + 1))
    w = np.empty(n_max + 1)
    w[0] = math.exp(-mu)
    for k in range(n_max):
        w[k + 1] = w[k] * mu / (k + 1)
    return w


def poisson_tail(mu: float, n) -> np.ndarray:
    """``P(Poisson(mu) > n)`` via the regularized incomplete gamma function."""
    n = np.asarray(n)
    if mu == 0:
        return np.zeros(n.shape)
    return special.pdtrc(n, mu)


def truncation_order(mu: float, tol: float) -> int:
    """Smallest ``N`` with ``P(Poisson(mu) > N) <= tol``."""
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    if mu == 0:
        return 0
    hi = int(math.ceil(mu + 12 * math.sqrt(mu) - math.log(tol) + 20))
    while poisson_tail(mu, hi) > tol:
        hi *= 2
    tails = poisson_tail(mu, np.arange(hi + 1))
    return int(np.argmax(tails <= tol))


def rw_law(step_law: MixedMeasure, n: int, start, *, budget: int = DEFAULT_BUDGET) -> MixedMeasure:
    """Law of ``start + S_n`` for the random walk with steps ``step_law``."""
    return shift(convolution_power(step_law, n, budget=budget), as_point(start, step_law.dim))


@dataclass(frozen=True, eq=False)
class SemigroupSeries:
    """Truncated Poisson mixture of convolution powers, anchored at 0.

    ``mixture`` is ``sum_{n <= N} w_n nu0^{*n}``; evaluating from another
    starting point is a shift of it.  ``powers`` caches ``nu0^{*n}`` for
    ``n <= N`` when they fit in the cache budget, otherwise it is ``None``
    and :meth:`iter_powers` recomputes them.
    """

    step_law: MixedMeasure
    rate: float
    time: float
    tol: float
    truncation_order: int
    weights: np.ndarray
    tail_mass: float
    mixture: MixedMeasure
    powers: Optional[tuple] = None
    budget: int = DEFAULT_BUDGET

    @property
    def mean(self) -> float:
        return self.rate * self.time

    def iter_powers(self) -> Iterator[tuple]:
        if self.powers is not None:
            yield from enumerate(self.powers)
            return
        yield from enumerate(_powers(self.step_law, self.truncation_order, self.budget))


def _powers(step_law: MixedMeasure, n_max: int, budget: int):
    p = dirac(np.zeros(step_law.dim))
    yield p
    for n in range(1, n_max + 1):
        try:
            p = convolve(p, step_law, budget=budget)
        except BudgetExceeded as exc:
            raise BudgetExceeded(f"power {n} exceeds the budget: {exc}", achieved=n - 1) from exc
        yield p


def build_series(step_law: MixedMeasure, rate: float, t: float, tol: float = DEFAULT_TOL, *,
                 budget: int = DEFAULT_BUDGET, cache_budget: int = CACHE_BUDGET) -> SemigroupSeries:
    """Build the truncated series for ``P_t`` with Poisson tail at most ``tol``.

    ``step_law`` must be a probability measure.
    """
    if not rate > 0:
        raise ValueError("rate must be positive")
    if t < 0:
        raise ValueError("time must be nonnegative")
    if abs(step_law.total_mass - 1.0) > 1e-9:
        raise ValueError("step law must be a probability measure")
    mu = rate * t
    if not math.isfinite(mu):
        raise ValueError("rate * t must be finite")
    N = truncation_order(mu, tol)
    weights = poisson_weights(mu, N)
    tail = float(poisson_tail(mu, N))

    acc = MeasureAccumulator(step_law.dim, step_law.atomic.dedup_tol)
    cache, cached_size = [], 0
    for n, p in enumerate(_powers(step_law, N, budget)):
        acc.add(p, weights[n])
        if cache is not None:
            cached_size += p.size
            if cached_size <= cache_budget:
                cache.append(p)
            else:
                cache = None
    return SemigroupSeries(
        step_law=step_law, rate=float(rate), time=float(t), tol=float(tol),
        truncation_order=N, weights=weights, tail_mass=tail, mixture=acc.result(),
        powers=None if cache is None else tuple(cache), budget=budget)


def cp_transition(series: SemigroupSeries, x) -> MixedMeasure:
    """The truncated transition law ``P_t(x, .)``; its mass is ``1 - tail_mass``."""
    return shift(series.mixture, as_point(x, series.step_law.dim))


def cp_tv(series: SemigroupSeries, x, y):
    """Interval ``(lower, upper)`` containing ``||P_t(x, .) - P_t(y, .)||_var``.

    The center is the exact distance between the truncated laws; the
    discarded tails (mass ``tail_mass`` each) widen it by ``2 * tail_mass``.
    """
    d = series.step_law.dim
    x, y = as_point(x, d), as_point(y, d)
    center = tv_distance(series.mixture, shift(series.mixture, y - x))
    half = 2.0 * series.tail_mass
    return max(0.0, center - half), min(2.0, center + half)


def cp_tv_center(series: SemigroupSeries, x, y) -> float:
    d = series.step_law.dim
    x, y = as_point(x, d), as_point(y, d)
    return tv_distance(series.mixture, shift(series.mixture, y - x))


def series_tv_bound(series: SemigroupSeries, x, y) -> float:
    """Poisson average of random-walk distances, plus the certified remainder.

    ``sum_{n <= N} w_n ||P(x + S_n) - P(y + S_n)||_var + 2 * tail_mass``.
    The ``n = 0`` term is ``w_0 * 2 (1 - [x = y])``.
    """
    d = series.step_law.dim
    dx = as_point(y, d) - as_point(x, d)
    total = 0.0
    for n, p in series.iter_powers():
        total += series.weights[n] * tv_distance(p, shift(p, dx))
    return total + 2.0 * series.tail_mass


def monotone_tv_check(step_law: MixedMeasure, rate: float, x, y, times: Sequence[float],
                      tol: float = DEFAULT_TOL, *, budget: int = DEFAULT_BUDGET) -> list:
    """Exact TV centers at increasing ``times`` (should be non-increasing up to ``4 tol``)."""
    times = list(times)
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be strictly increasing")
    return [cp_tv_center(build_series(step_law, rate, t, tol, budget=budget, cache_budget=0), x, y)
            for t in times]


def poisson_pmf(mu: float, k) -> np.ndarray:
    """Poisson(mu) pmf at integers ``k`` (zero for negative ``k``)."""
    k = np.asarray(k)
    out = np.zeros(k.shape)
    pos = k >= 0
    if mu == 0:
        out[pos] = (k[pos] == 0).astype(float)
        return out
    kk = k[pos].astype(float)
    out[pos] = np.exp(kk * math.log(mu) - mu - special.gammaln(kk + 1))
    return out


def poisson_shift_inequality_check(rate: float, t: float, s: float, f_support_radius: int) -> bool:
    """Check ``P_{t+s} f(i) >= exp(-rate s) P_t f(i)`` for the Poisson process on Z.

    ``f`` ranges over indicators of single points ``j`` and ``i`` over
    ``[-R, R]``; for such ``f`` both sides are Poisson pmfs at ``j - i``.
    """
    R = int(f_support_radius)
    i = np.arange(-R, R + 1)
    j = np.arange(-R, R + 1)
    k = (j[None, :] - i[:, None]).ravel()
    lhs = poisson_pmf(rate * (t + s), k)
    rhs = math.exp(-rate * s) * poisson_pmf(rate * t, k)
    return bool(np.all(lhs + 1e-12 >= rhs))
