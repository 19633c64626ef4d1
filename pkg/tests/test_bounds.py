import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levycoupling.bounds import (
    RateFit,
    calibrate_th2_constant,
    couplingo2_bound,
    empirical_c_xy,
    fit_rate,
    jensen_chain_check,
    th2_bound,
)
from levycoupling.errors import InsufficientData
from levycoupling.measure import atoms, uniform
from levycoupling.semigroup import build_series, cp_tv

LAZY = atoms([-1.0, 0.0, 1.0], [1 / 3] * 3)
COARSE_UNIFORM = uniform(0, 1, 1 / 8)
CALIB_TIMES = [2.0**k for k in range(11)]

# smallest c making th2_bound dominate the exact upper TV of the h = 1/8
# uniform jump law, lam = 1, over CALIB_TIMES and |x - y| in {0.25, 1, 3}
TH2_C = 1.142954111892822


def jensen_lhs_oracle(mu, terms=2000):
    """sum_{n>=1} mu^n / (sqrt(n) n!) in 60-digit decimal arithmetic."""
    getcontext().prec = 60
    m = Decimal(mu)
    term = Decimal(1)
    total = Decimal(0)
    for n in range(1, terms + 1):
        term = term * m / n
        total += term / Decimal(n).sqrt()
    return float(total)


def lazy_c_xy_oracle(n_max=200):
    """max_n sqrt(n) * TV(lazy^n, lazy^n shifted by 1) from trinomial coefficients."""
    p = np.array([1.0])
    best = 0.0
    for n in range(1, n_max + 1):
        p = np.convolve(p, np.ones(3) / 3)
        tv = np.abs(np.diff(np.concatenate([[0.0], p, [0.0]]))).sum()
        best = max(best, math.sqrt(n) * tv)
    return best


# ---------------------------------------------------------------------------
# closed forms


def test_couplingo2_examples():
    assert couplingo2_bound(1.0, 3.0, 0.0, True) == 0.0
    b = couplingo2_bound(1.0, 1e6, 0.7, False)
    assert b == pytest.approx(math.sqrt(2) * 0.7 / 1e3, abs=1e-3)
    assert couplingo2_bound(1.0, 1e-3, 5.0, False) == 2.0
    with pytest.raises(ValueError):
        couplingo2_bound(0.0, 1.0, 1.0, False)


def test_empirical_c_xy_matches_trinomial():
    assert empirical_c_xy(LAZY, 0.0, 1.0) == pytest.approx(lazy_c_xy_oracle(), rel=1e-12)
    assert empirical_c_xy(LAZY, 2.0, 2.0, 20) == 0.0


@pytest.mark.parametrize("t", [1.0, 10.0, 100.0])
def test_couplingo2_dominates_lazy(t):
    c = empirical_c_xy(LAZY, 0.0, 1.0)
    upper = cp_tv(build_series(LAZY, 1.0, t), 0.0, 1.0)[1]
    assert couplingo2_bound(1.0, t, c, False) >= upper


@pytest.mark.parametrize("mu", [0.01, 0.1, 1.0, 10.0, 100.0, 500.0])
def test_jensen_chain(mu):
    lhs, rhs = jensen_chain_check(mu, 1.0)
    assert lhs <= rhs
    assert lhs == pytest.approx(jensen_lhs_oracle(mu), rel=1e-12)


def test_jensen_chain_closed_forms():
    lhs, rhs = jensen_chain_check(1.0, 1.0)
    assert rhs == pytest.approx(math.sqrt(2) * (math.e - 1), rel=1e-15)
    assert rhs == pytest.approx(2.4301, abs=1e-4)
    lhs, rhs = jensen_chain_check(0.01, 1.0)
    assert lhs == pytest.approx(0.01, rel=0.01)
    assert rhs == pytest.approx(0.1414, abs=1e-3)
    with pytest.raises(ValueError):
        jensen_chain_check(800.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-4, 699.0))
def test_jensen_chain_property(mu):
    lhs, rhs = jensen_chain_check(mu, 1.0)
    assert lhs <= rhs


def test_th2_examples():
    assert th2_bound(0.0, 0.0, 1.0, 3.0) == 2.0
    assert th2_bound(1e-12, 0.0, 1.0, 3.0) == 2.0
    assert th2_bound(5.0, 0.0, 1.0, 0.0) == 0.0
    assert th2_bound(4.0, [0.0, 0.0], [3.0, 4.0], 1.0) == 2.0  # (1 + 5) / 2 capped
    assert th2_bound(100.0, [0.0, 0.0], [3.0, 4.0], 1.0) == pytest.approx(0.6)


def test_th2_calibration_regression():
    c = calibrate_th2_constant(COARSE_UNIFORM, 1.0, [0.25, 1.0, 3.0], CALIB_TIMES)
    assert c == pytest.approx(TH2_C, rel=1e-9)


@pytest.mark.parametrize("r", [0.25, 1.0, 3.0, 2.0])
def test_th2_dominates_with_calibrated_constant(r):
    # r = 2 is held out of the calibration family
    for t in CALIB_TIMES:
        upper = cp_tv(build_series(COARSE_UNIFORM, 1.0, t), 0.0, r)[1]
        assert th2_bound(t, 0.0, r, TH2_C) >= upper - 1e-12


# ---------------------------------------------------------------------------
# rate fitting


def test_fit_exact_power_law():
    t = np.logspace(0, 4, 9)
    fit = fit_rate(t, t**-0.5)
    assert isinstance(fit, RateFit)
    assert fit.slope == pytest.approx(-0.5, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert not fit.no_decay


@settings(max_examples=30, deadline=None)
@given(st.floats(-2.0, -0.1), st.floats(0.1, 10.0))
def test_fit_recovers_slope(alpha, scale_):
    t = np.logspace(0, 3, 12)
    assert fit_rate(t, scale_ * t**alpha).slope == pytest.approx(alpha, abs=0.002)


def test_fit_noisy_power_law():
    rng = np.random.default_rng(12)
    t = np.logspace(0, 4, 20)
    v = 3 * t**-0.5 * (1 + 0.01 * rng.standard_normal(t.size))
    assert -0.52 <= fit_rate(t, v).slope <= -0.48


def test_fit_constant_flags_no_decay():
    fit = fit_rate(np.logspace(0, 3, 8), np.full(8, 2.0))
    assert abs(fit.slope) <= 1e-12
    assert fit.no_decay
    assert fit.to_dict()["no_decay"] is True


def test_fit_excludes_floor():
    t = np.logspace(0, 4, 9)
    v = t**-0.5
    v[-2:] = 0.0
    fit = fit_rate(t, v)
    assert fit.n_excluded == 2
    assert len(fit.times) == 7


def test_fit_insufficient():
    with pytest.raises(InsufficientData):
        fit_rate([1, 10, 100, 1000], [1, 0.3, 0.1, 0.03])
    with pytest.raises(InsufficientData):
        fit_rate(np.linspace(1, 10, 10), np.linspace(1, 10, 10) ** -0.5)
