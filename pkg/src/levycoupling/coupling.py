"""Mineka coupling of random walks and its Poisson subordination.

The Mineka step law couples two steps ``xi`` and ``xi' = xi + dxi`` with the
same marginal ``nu`` so that ``dxi`` takes only the values ``+r e1``,
``-r e1`` and ``0`` (``r = |a|``), symmetrically.  The difference of the
coupled walks is then a lazy simple random walk on ``r Z`` and the walks
meet when it first reaches ``r``.  Running the coupled walks on the jump
times of an independent Poisson clock couples the compound Poisson
processes; they meet at the arrival time of the ``T^S``-th jump.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy import special

from .errors import CriterionFailed, DegenerateOverlap, ZeroDisplacement
from .measure import (
    MixedMeasure,
    add,
    as_point,
    jordan,
    meet,
    normalize,
    rotate_to_e1,
    sample,
    scale,
    shift,
)
from .semigroup import poisson_tail, poisson_weights, truncation_order

DEFAULT_MAX_STEPS = 10_000_000
DEFAULT_CHUNK = 10_000
OVERLAP_FLOOR = 1e-12


class _Censored:
    """Marker for a coupling time beyond the simulation horizon."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "CENSORED"

    def __reduce__(self):
        return (_Censored, ())


CENSORED = _Censored()


@dataclass(frozen=True, eq=False)
class MinekaStepLaw:
    """Joint law of ``(xi, dxi)`` for displacement ``a``, in rotated coordinates.

    ``base_law`` is ``nu0 o R_a^{-1}`` where ``R_a`` (``rotation``) maps ``a``
    to ``|a| e1``.  ``comp_plus`` is the normalized law of ``xi`` given
    ``dxi = +|a| e1`` and so on; ``comp_zero`` is ``None`` if ``p_zero == 0``.
    """

    displacement: np.ndarray
    rotation: np.ndarray
    base_law: MixedMeasure
    comp_plus: MixedMeasure
    comp_minus: MixedMeasure
    comp_zero: Optional[MixedMeasure]
    p_plus: float
    p_minus: float
    p_zero: float

    @property
    def step(self) -> float:
        return float(np.linalg.norm(self.displacement))

    @property
    def stay_prob(self) -> float:
        return self.p_zero

    @property
    def dim(self) -> int:
        return self.base_law.dim


def build_mineka(nu0: MixedMeasure, a) -> MinekaStepLaw:
    """Construct the Mineka step law of the probability ``nu0`` for displacement ``a``."""
    a = as_point(a, nu0.dim)
    r = float(np.linalg.norm(a))
    if r == 0:
        raise ZeroDisplacement("displacement must be nonzero")
    nu = rotate_to_e1(nu0, a)
    R = nu.meta["rotation"]
    e = np.zeros(nu0.dim)
    e[0] = r
    m_plus = meet(nu, shift(nu, -e))
    m_minus = meet(nu, shift(nu, e))
    overlap = m_plus.total_mass
    if overlap <= OVERLAP_FLOOR:
        raise DegenerateOverlap(
            f"nu0 and its shift by |a| = {r:g} have no common mass; the Mineka coupling is degenerate")
    if abs(m_minus.total_mass - overlap) > 1e-12 * max(1.0, overlap):
        raise RuntimeError(
            f"meets with +/- shifts differ: {overlap!r} vs {m_minus.total_mass!r}")
    p_plus = 0.5 * overlap
    p_minus = 0.5 * m_minus.total_mass
    p_zero = max(0.0, 1.0 - p_plus - p_minus)
    residual, _ = jordan(nu, add(scale(m_plus, 0.5), scale(m_minus, 0.5)))
    comp_zero = normalize(residual)[0] if residual.total_mass > 1e-15 and p_zero > 0 else None
    if comp_zero is None:
        p_zero = 0.0
    return MinekaStepLaw(
        displacement=a, rotation=R, base_law=nu,
        comp_plus=normalize(m_plus)[0], comp_minus=normalize(m_minus)[0], comp_zero=comp_zero,
        p_plus=p_plus, p_minus=p_minus, p_zero=p_zero)


def _step_probs(law: MinekaStepLaw) -> np.ndarray:
    p = np.array([law.p_plus, law.p_minus, law.p_zero])
    return p / p.sum()


def sample_coupled_steps(law: MinekaStepLaw, size: int, rng: np.random.Generator):
    """Draw ``size`` coupled steps; returns ``(xi, xi_prime)``, each ``(size, d)``."""
    comp = rng.choice(3, size=size, p=_step_probs(law))
    xi = np.empty((size, law.dim))
    shifts = np.zeros((3, law.dim))
    shifts[0, 0], shifts[1, 0] = law.step, -law.step
    for j, part in enumerate((law.comp_plus, law.comp_minus, law.comp_zero)):
        mask = comp == j
        k = int(mask.sum())
        if k:
            xi[mask] = sample(part, k, rng)
    return xi, xi + shifts[comp]


def sample_coupled_step(law: MinekaStepLaw, rng: np.random.Generator):
    xi, xi_prime = sample_coupled_steps(law, 1, rng)
    return xi[0], xi_prime[0]


# ---------------------------------------------------------------------------
# first passage of the difference walk


def exact_first_passage(stay_prob: float, n_max: int) -> np.ndarray:
    """``P(T^S > n)`` for ``n = 0..n_max`` by dynamic programming.

    The difference walk, in units of ``|a|``, starts at 0, moves +/-1 with
    probability ``(1 - stay_prob) / 2`` each and is absorbed at +1.  States
    below ``-L`` with ``L ~ 40 sqrt(n_max)`` are dropped; the mass lost that
    way is below ``exp(-800)``.
    """
    if not 0 <= stay_prob < 1:
        raise ValueError("stay_prob must lie in [0, 1)")
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    p = float(stay_prob)
    q = 0.5 * (1.0 - p)
    L = min(n_max, int(math.ceil(40 * math.sqrt(n_max))) + 64)
    v = np.zeros(L + 1)  # v[i] = P(Z = -i, not absorbed)
    v[0] = 1.0
    out = np.empty(n_max + 1)
    out[0] = 1.0
    new = np.zeros_like(v)
    for n in range(1, n_max + 1):
        w = min(n, L) + 1  # active window
        np.multiply(v[:w], p, out=new[:w])
        new[:w - 1] += q * v[1:w]
        new[1:w] += q * v[:w - 1]
        v, new = new, v
        out[n] = v[:w].sum()
    return out


def free_walk_window_prob(stay_prob: float, n_max: int) -> np.ndarray:
    """``P(0 <= Z_n <= 1)`` (in units of ``|a|``) for the unabsorbed walk, ``n = 0..n_max``."""
    p = float(stay_prob)
    q = 0.5 * (1.0 - p)
    v = np.zeros(2 * n_max + 3)
    c = n_max + 1  # index of Z = 0
    v[c] = 1.0
    out = np.empty(n_max + 1)
    out[0] = 1.0
    for n in range(1, n_max + 1):
        new = p * v
        new[1:] += q * v[:-1]
        new[:-1] += q * v[1:]
        v = new
        out[n] = v[c] + v[c + 1]
    return out


def _srw_passage_steps(u: np.ndarray, k_cap: int) -> np.ndarray:
    """Invert ``P(tau > 2k - 1) = B(k + 1/2, 1/2) / pi`` for the simple walk.

    ``tau`` is the first passage of a simple symmetric walk to +1.  Returns
    ``K`` with ``tau = 2K - 1``, or ``k_cap + 1`` where ``tau > 2 k_cap - 1``.
    """
    log_u = np.log(u)

    def log_tail(k):
        return special.betaln(k + 0.5, 0.5) - math.log(math.pi)

    out = np.full(u.shape, k_cap + 1, dtype=np.int64)
    hit = log_tail(np.float64(k_cap)) < log_u
    if not np.any(hit):
        return out
    lu = log_u[hit]
    lo = np.ones(lu.shape, dtype=np.int64)  # tail(lo - 1) >= u
    hi = np.full(lu.shape, k_cap, dtype=np.int64)  # tail(hi) < u
    done = log_tail(lo.astype(float)) < lu
    hi[done] = 1
    while True:
        active = lo < hi
        if not np.any(active):
            break
        mid = (lo + hi) // 2
        below = log_tail(mid.astype(float)) < lu
        hi = np.where(active & below, mid, hi)
        lo = np.where(active & ~below, mid + 1, lo)
    out[hit] = hi
    return out


def sample_t_s(stay_prob: float, size: int, max_steps: int, rng: np.random.Generator,
               method: str = "jump"):
    """Draw ``size`` walk coupling times.

    Returns ``(times, censored)``; censored entries hold ``max_steps + 1``.

    ``method="jump"`` is exact and O(1) per draw: the number of moves is the
    first passage of a simple walk (inverted from its closed-form tail) and
    the lazy steps in between are negative binomial.  ``method="walk"``
    steps the lazy difference walk directly.
    """
    if not 0 <= stay_prob < 1:
        raise ValueError("stay_prob must lie in [0, 1)")
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    if method == "jump":
        k_cap = max_steps // 2 + 1
        u = rng.random(size)
        u[u == 0.0] = np.nextafter(0.0, 1.0)
        K = _srw_passage_steps(u, k_cap)
        moves = 2 * K - 1
        if stay_prob > 0:
            lazy = np.zeros(size, dtype=np.int64)
            ok = moves <= max_steps
            lazy[ok] = rng.negative_binomial(moves[ok], 1.0 - stay_prob)
        else:
            lazy = 0
        times = moves + lazy
    elif method == "walk":
        times = _walk_times(stay_prob, size, max_steps, rng)
    else:
        raise ValueError(f"unknown method {method!r}")
    censored = times > max_steps
    times = np.where(censored, max_steps + 1, times).astype(np.int64)
    return times, censored


def _walk_times(stay_prob: float, size: int, max_steps: int, rng: np.random.Generator):
    q = 0.5 * (1.0 - stay_prob)
    z = np.zeros(size, dtype=np.int64)
    times = np.full(size, max_steps + 1, dtype=np.int64)
    alive = np.arange(size)
    for n in range(1, max_steps + 1):
        if alive.size == 0:
            break
        u = rng.random(alive.size)
        z[alive] += (u < q).astype(np.int64) - ((u >= q) & (u < 2 * q)).astype(np.int64)
        hit = z[alive] == 1
        times[alive[hit]] = n
        alive = alive[~hit]
    return times


def _stay(law_or_prob: Union[MinekaStepLaw, float]) -> float:
    return law_or_prob.stay_prob if isinstance(law_or_prob, MinekaStepLaw) else float(law_or_prob)


def simulate_t_s(law: Union[MinekaStepLaw, float], max_steps: int, rng: np.random.Generator,
                 method: str = "jump"):
    """One walk coupling time ``T^S``, or :data:`CENSORED` past ``max_steps``."""
    times, censored = sample_t_s(_stay(law), 1, max_steps, rng, method=method)
    return CENSORED if censored[0] else int(times[0])


# ---------------------------------------------------------------------------
# compound Poisson coupling


@dataclass(frozen=True)
class CouplingSample:
    """One coupled compound Poisson run.

    ``t_l`` is the arrival time of jump number ``t_s`` of the rate-``lam``
    clock; for censored runs ``t_s`` is ``None`` and ``t_l`` is the arrival
    of jump ``max_steps + 1``, a lower bound.
    """

    t_s: Optional[int]
    poisson_path_seed: int
    t_l: float
    k_xy: float
    censored: bool = False


def simulate_t_l(law: Union[MinekaStepLaw, float], rate: float, rng: np.random.Generator,
                 max_steps: int = DEFAULT_MAX_STEPS, max_time: Optional[float] = None) -> CouplingSample:
    """Sample ``T^S``, then the ``T^S``-th arrival of the Poisson clock.

    The arrival is drawn as ``Gamma(T^S, 1/rate)`` from a generator seeded
    with ``poisson_path_seed``.  Runs with ``t_l > max_time`` are marked
    censored.
    """
    if not rate > 0:
        raise ValueError("rate must be positive")
    t_s = simulate_t_s(law, max_steps, rng)
    path_seed = int(rng.integers(0, 2**63 - 1))
    clock = np.random.default_rng(path_seed)
    censored = t_s is CENSORED
    shape = max_steps + 1 if censored else t_s
    t_l = float(clock.gamma(shape, 1.0 / rate))
    if max_time is not None and t_l > max_time:
        censored = True
    return CouplingSample(t_s=None if t_s is CENSORED else t_s, poisson_path_seed=path_seed,
                          t_l=t_l, k_xy=t_l, censored=censored)


@dataclass(frozen=True)
class CoupledTrace:
    """Full path of a coupled compound Poisson pair, for inspection."""

    t_s: Optional[int]
    arrivals: np.ndarray
    x_path: np.ndarray
    y_path: np.ndarray
    t_l: float
    k_xy: float


def trace_coupled_cp(law: MinekaStepLaw, rate: float, rng: np.random.Generator,
                     max_steps: int = 100_000, atol: float = 1e-9) -> CoupledTrace:
    """Simulate both coupled compound Poisson paths jump by jump.

    The first process starts at 0 and the second at ``|a| e1`` (rotated
    coordinates).  After the walks meet they take identical steps.  ``t_l``
    is read off the paths (first jump time at which they coincide) and
    ``k_xy`` off the clock (first time ``N_t >= T^S``), independently.
    """
    d = law.dim
    x = np.zeros(d)
    y = np.zeros(d)
    y[0] = law.step
    xs, ys = [x.copy()], [y.copy()]
    t_s = None
    for k in range(1, max_steps + 1):
        xi, xi_p = sample_coupled_step(law, rng)
        x = x + xi
        y = y + (xi if t_s is not None else xi_p)
        xs.append(x.copy())
        ys.append(y.copy())
        if t_s is None and np.all(np.abs(x - y) <= atol):
            t_s = k
            break
    n = len(xs) - 1
    arrivals = np.cumsum(rng.exponential(1.0 / rate, size=n))
    x_path, y_path = np.array(xs), np.array(ys)
    same = np.all(np.abs(x_path[1:] - y_path[1:]) <= atol, axis=1)
    t_l = float(arrivals[np.argmax(same)]) if np.any(same) else math.inf
    k_xy = float(arrivals[t_s - 1]) if t_s is not None else math.inf
    return CoupledTrace(t_s=t_s, arrivals=arrivals, x_path=x_path, y_path=y_path, t_l=t_l, k_xy=k_xy)


def subordinated_tail(stay_prob: float, rate: float, t: float, tol: float = 1e-12):
    """``P(T^L > t) = sum_k w_k(rate t) P(T^S > k)`` with exact inner tails.

    Returns ``(lower, upper)``; the truncated Poisson tail (at most ``tol``)
    bounds the remainder because ``P(T^S > k) <= 1``.
    """
    mu = rate * t
    N = max(1, truncation_order(mu, tol))
    w = poisson_weights(mu, N)
    ts_tail = exact_first_passage(stay_prob, N)
    value = float(np.dot(w, ts_tail))
    return value, value + float(poisson_tail(mu, N))


@dataclass(frozen=True)
class TailEstimate:
    t: float
    n_samples: int
    p_hat: float
    stderr: float
    n_censored: int


def _chunk_tl(args):
    stay_prob, rate, size, seed, chunk, max_steps, fixed_ts = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk,)))
    if fixed_ts is not None:
        times = np.full(size, int(fixed_ts), dtype=np.int64)
        censored = np.zeros(size, dtype=bool)
    else:
        times, censored = sample_t_s(stay_prob, size, max_steps, rng)
    t_l = rng.gamma(times.astype(float), 1.0 / rate)
    return t_l, censored


def sample_t_l(stay_prob: float, rate: float, n_samples: int, seed: int, *, workers: int = 1,
               chunk_size: int = DEFAULT_CHUNK, max_steps: int = DEFAULT_MAX_STEPS,
               fixed_ts: Optional[int] = None):
    """Vectorized ``T^L`` draws; returns ``(t_l, censored)``.

    Chunk ``c`` uses the stream ``SeedSequence(seed, spawn_key=(c,))`` and
    chunks are concatenated in order, so the output depends only on
    ``(seed, chunk_size)`` and not on the number of workers.
    ``fixed_ts`` replaces ``T^S`` by a constant (a stub for testing).
    """
    if not rate > 0:
        raise ValueError("rate must be positive")
    if n_samples < 1 or chunk_size < 1 or workers < 1:
        raise ValueError("n_samples, chunk_size and workers must be positive")
    jobs = []
    for c, start in enumerate(range(0, n_samples, chunk_size)):
        size = min(chunk_size, n_samples - start)
        jobs.append((stay_prob, rate, size, seed, c, max_steps, fixed_ts))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_tl, jobs))
    else:
        parts = [_chunk_tl(j) for j in jobs]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def estimate_tl_tail(t_l: np.ndarray, censored: np.ndarray, times: Sequence[float]) -> list:
    """Empirical ``P(T^L > t)`` with binomial standard errors.

    Censored runs carry a lower bound for ``T^L``; they are counted as
    ``T^L > t``, which makes ``p_hat`` an upper estimate when any are present.
    """
    n = len(t_l)
    out = []
    for t in times:
        exceed = (t_l > t) | censored
        p = float(exceed.mean())
        out.append(TailEstimate(t=float(t), n_samples=n, p_hat=p,
                                stderr=math.sqrt(max(p * (1 - p), 0.0) / n),
                                n_censored=int(censored.sum())))
    return out


# ---------------------------------------------------------------------------
# chaining


def chained_tv_bound(nu0: MixedMeasure, delta: float, x, y, n: int,
                     grid_step: Optional[float] = None) -> float:
    """Bound ``||P(x + S_n) - P(y + S_n)||_var`` by chaining Mineka links.

    ``k = floor(|x - y| / delta) + 1`` links of length at most ``delta`` each
    contribute ``2 P(T^S > n)``, evaluated at the worst stay probability
    ``1 - eta0(delta)`` over the displacement grid.
    """
    from .criteria import default_grid_step, eta0

    if n < 1:
        raise ValueError("n must be at least 1")
    grid_step = default_grid_step(nu0, delta, 64) if grid_step is None else grid_step
    e0 = eta0(nu0, delta, grid_step)
    if e0 <= OVERLAP_FLOOR:
        raise CriterionFailed(f"eta0({delta}) = {e0:g}: no uniform overlap, chaining does not apply")
    gamma = min(1.0 - e0, 1.0 - 1e-15)
    dist = float(np.linalg.norm(as_point(x, nu0.dim) - as_point(y, nu0.dim)))
    k = int(math.floor(dist / delta)) + 1
    return k * 2.0 * float(exact_first_passage(max(gamma, 0.0), n)[n])
