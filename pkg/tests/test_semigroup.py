import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from levycoupling.measure import atoms, dirac, shift, tv_distance, uniform
from levycoupling.semigroup import (
    build_series,
    cp_transition,
    cp_tv,
    cp_tv_center,
    monotone_tv_check,
    poisson_shift_inequality_check,
    poisson_tail,
    poisson_weights,
    rw_law,
    series_tv_bound,
    truncation_order,
)

LAZY = atoms([-1.0, 0.0, 1.0], [1 / 3] * 3)

# exact cp_tv of the lazy walk, lam = 1, x = 0, y = 1, t = 100, tol = 1e-10;
# cross-checked against the Skellam(t/3, t/3) law in test_lazy_walk_regression
LAZY_T100 = (0.09790529887255954, 0.09790529915599151)


def poisson_tail_oracle(mu, n):
    """P(Poisson(mu) > n) by summing the pmf beyond n (independent of pdtrc)."""
    k = np.arange(n + 1, n + 1 + int(mu + 60 * math.sqrt(mu + 1) + 60))
    return float(stats.poisson.pmf(k, mu).sum())


def skellam_tv(t, dx, kmax=None):
    """Exact TV between lazy-walk compound Poisson laws started dx apart (integer dx)."""
    kmax = kmax or int(t + 40 * math.sqrt(t) + 40)
    k = np.arange(-kmax, kmax + 1)
    p = stats.skellam.pmf(k, t / 3, t / 3)
    q = stats.skellam.pmf(k - dx, t / 3, t / 3)
    return float(np.abs(p - q).sum())


# ---------------------------------------------------------------------------
# Poisson helpers


@pytest.mark.parametrize("mu", [0.1, 1.0, 20.0, 300.0, 1500.0])
def test_poisson_weights_match_pmf(mu):
    n = int(mu + 10 * math.sqrt(mu) + 10)
    w = poisson_weights(mu, n)
    np.testing.assert_allclose(w, stats.poisson.pmf(np.arange(n + 1), mu), rtol=1e-10, atol=1e-300)


def test_truncation_order_examples():
    assert truncation_order(0.0, 1e-6) == 0
    assert truncation_order(1.0, 1e-6) == 9
    assert poisson_tail_oracle(1.0, 9) == pytest.approx(1.1e-7, rel=0.05)
    assert poisson_tail_oracle(1.0, 8) > 1e-6
    N = truncation_order(20.0, 1e-8)
    assert poisson_tail_oracle(20.0, N) <= 1e-8 < poisson_tail_oracle(20.0, N - 1)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 500.0), st.sampled_from([1e-4, 1e-8, 1e-12]))
def test_normalization_of_weights(mu, tol):
    N = truncation_order(mu, tol)
    w = poisson_weights(mu, N)
    tail = float(poisson_tail(mu, N))
    assert tail <= tol
    assert abs(w.sum() + tail - 1.0) <= 1e-12


# ---------------------------------------------------------------------------
# random-walk laws


def test_rw_law_examples():
    assert tv_distance(rw_law(LAZY, 0, 2.5), dirac(2.5)) == 0.0
    sym = atoms([-1.0, 1.0], [0.5, 0.5])
    assert tv_distance(rw_law(sym, 2, 0.0), atoms([-2.0, 0.0, 2.0], [0.25, 0.5, 0.25])) == 0.0


@pytest.mark.parametrize("n", range(0, 9))
def test_parity_disjoint(n):
    sym = atoms([-1.0, 1.0], [0.5, 0.5])
    assert tv_distance(rw_law(sym, n, 0.0), rw_law(sym, n, 1.0)) == 2.0


# ---------------------------------------------------------------------------
# series


def test_zero_time_series():
    s = build_series(LAZY, 1.0, 0.0)
    assert s.truncation_order == 0
    assert tv_distance(s.mixture, dirac(0.0)) == 0.0


def test_small_time_is_nearly_dirac():
    s = build_series(LAZY, 1.0, 1e-9, tol=1e-6)
    p = cp_transition(s, 3.0)
    near = p.atomic.masses[np.abs(p.atomic.locations[:, 0] - 3.0) < 1e-12].sum()
    assert near >= 1 - 2e-9


def test_poisson_process_law():
    s = build_series(dirac(1.0), 1.0, 1.0, tol=1e-12)
    p = cp_transition(s, 0.5)
    k = np.rint(p.atomic.locations[:, 0] - 0.5).astype(int)
    np.testing.assert_allclose(p.atomic.masses, stats.poisson.pmf(k, 1.0), rtol=0, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 30.0), st.floats(-3, 3))
def test_mass_plus_tail_is_one(mu, x):
    s = build_series(atoms([0.5, 1.0], [0.3, 0.7]), 1.0, mu, tol=1e-9)
    assert abs(cp_transition(s, x).total_mass + s.tail_mass - 1.0) <= 1e-12


def test_translation_covariance():
    s = build_series(uniform(0, 1, 0.125), 2.0, 1.5)
    p0 = cp_transition(s, 0.0)
    p1 = cp_transition(s, 0.375)
    assert tv_distance(p1, shift(p0, 0.375)) == 0.0


def test_cp_tv_equal_points():
    tol = 1e-8
    s = build_series(LAZY, 1.0, 7.0, tol)
    lo, hi = cp_tv(s, 0.0, 0.0)
    assert lo == 0.0 and hi <= 4 * tol


def test_lattice_half_shift_is_maximal():
    tol = 1e-8
    for t in (1.0, 10.0, 100.0):
        s = build_series(LAZY, 1.0, t, tol)
        lo, hi = cp_tv(s, 0.0, 0.5)
        target = 2 * (1 - s.tail_mass)
        assert abs(cp_tv_center(s, 0.0, 0.5) - target) <= 4 * tol
        assert lo <= target <= hi


def test_lazy_walk_regression():
    s = build_series(LAZY, 1.0, 100.0, 1e-10)
    lo, hi = cp_tv(s, 0.0, 1.0)
    assert hi - lo <= 4e-10
    assert lo == pytest.approx(LAZY_T100[0], abs=1e-15)
    assert hi == pytest.approx(LAZY_T100[1], abs=1e-15)
    assert lo - 1e-12 <= skellam_tv(100.0, 1) <= hi + 1e-12


@pytest.mark.parametrize("t", [0.5, 3.0, 25.0])
def test_lazy_walk_matches_skellam(t):
    s = build_series(LAZY, 1.0, t, 1e-12)
    lo, hi = cp_tv(s, 0.0, 2.0)
    assert lo - 1e-12 <= skellam_tv(t, 2) <= hi + 1e-12


def test_series_bound_equal_points_is_tail():
    s = build_series(LAZY, 1.0, 3.0)
    assert series_tv_bound(s, 1.0, 1.0) == pytest.approx(2 * s.tail_mass, abs=1e-15)


def test_series_bound_degenerate_jump():
    s = build_series(dirac(1.0), 1.0, 4.0, 1e-10)
    b = series_tv_bound(s, 0.0, 0.5)
    assert b == pytest.approx(2.0, abs=1e-9)


def test_series_bound_dominates_uniform():
    s = build_series(uniform(0, 1, 1 / 64), 1.0, 5.0)
    assert series_tv_bound(s, 0.0, 0.75) >= cp_tv(s, 0.0, 0.75)[1] - 1e-9


def test_monotone_examples():
    assert max(monotone_tv_check(LAZY, 1.0, 0.0, 0.0, [1, 2, 4])) <= 1e-15
    vals = monotone_tv_check(LAZY, 1.0, 0.0, 1.0, [2**k for k in range(10)])
    assert all(b < a for a, b in zip(vals, vals[1:]))
    lat = monotone_tv_check(LAZY, 1.0, 0.0, 0.5, [1, 4, 16, 64])
    assert max(abs(v - 2) for v in lat) <= 4e-8


def test_monotone_rejects_unsorted():
    with pytest.raises(ValueError):
        monotone_tv_check(LAZY, 1.0, 0.0, 1.0, [2, 1])


@pytest.mark.parametrize("rate,t,s,R", [(1, 1, 0, 10), (1, 1, 1, 10), (3, 0.5, 2, 20)])
def test_poisson_shift_inequality(rate, t, s, R):
    assert poisson_shift_inequality_check(rate, t, s, R)
    # independent pointwise oracle
    k = np.arange(0, 2 * R + 1)
    assert np.all(stats.poisson.pmf(k, rate * (t + s)) + 1e-12
                  >= math.exp(-rate * s) * stats.poisson.pmf(k, rate * t))


def test_build_series_validation():
    with pytest.raises(ValueError):
        build_series(atoms([1.0], [2.0]), 1.0, 1.0)
    with pytest.raises(ValueError):
        build_series(LAZY, 0.0, 1.0)
    with pytest.raises(ValueError):
        build_series(LAZY, 1.0, -1.0)
