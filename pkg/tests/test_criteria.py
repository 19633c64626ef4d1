import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levycoupling.criteria import (
    LevyTriplet,
    Verdict,
    ac_mass_of_power,
    check_ex2_cond2,
    check_th22,
    decide_coupling_property,
    displacement_grid,
    eta0,
    overlap_profile,
)
from levycoupling.errors import SchemaError
from levycoupling.measure import add, atoms, dirac, grid_density, scale, uniform, zero_measure
from levycoupling.semigroup import build_series, cp_tv

UNIFORM = uniform(0, 1, 1 / 64)
SYM = atoms([-1.0, 1.0], [0.5, 0.5])


def triplet(levy, gaussian=0.0, **kw):
    d = levy.dim
    return LevyTriplet(np.zeros(d), np.eye(d) * gaussian, levy, **kw)


def stable_like(h=1 / 256):
    centers = -2 + (np.arange(int(round(4 / h))) + 0.5) * h
    return grid_density([-2.0], h, np.abs(centers) ** -1.5 * h)


# ---------------------------------------------------------------------------
# triplet validation


def test_triplet_validation_messages():
    with pytest.raises(ValueError, match="gaussian"):
        LevyTriplet([0.0], [[-1.0]], UNIFORM)
    with pytest.raises(ValueError, match="gaussian"):
        LevyTriplet([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]], atoms([[1.0, 0.0]], [1.0], dim=2))
    with pytest.raises(ValueError, match="drift"):
        LevyTriplet([0.0, 1.0], [[0.0]], UNIFORM)
    with pytest.raises(ValueError, match="levy"):
        LevyTriplet([0.0], [[0.0]], zero_measure(1))
    with pytest.raises(ValueError, match="levy"):
        LevyTriplet([0.0], [[0.0]], atoms([0.01], [1.0]), cutoff=0.5, infinite_activity=True)


def test_triplet_dict_round_trip():
    t = triplet(add(UNIFORM, dirac(2.0)), gaussian=0.5)
    back = LevyTriplet.from_dict(t.to_dict())
    assert np.array_equal(back.gaussian, t.gaussian)
    assert back.levy.total_mass == t.levy.total_mass
    with pytest.raises(SchemaError):
        LevyTriplet.from_dict({"drift": [0.0]})
    with pytest.raises(SchemaError):
        LevyTriplet.from_dict({"levy": {"dim": 1, "atoms": [{"x": [1.0]}]}})


# ---------------------------------------------------------------------------
# overlap infimum


def test_displacement_grid_half_ball():
    xs = displacement_grid(2, 1.0, 0.5)
    assert np.all(np.linalg.norm(xs, axis=1) <= 1.0 + 1e-12)
    # no point together with its negative, except 0
    keys = {tuple(np.round(x, 9)) for x in xs}
    assert all(tuple(np.round(-x, 9)) not in keys for x in xs if np.any(x != 0))


def test_eta0_uniform():
    val = eta0(UNIFORM, 0.5, 1 / 64)
    assert val == pytest.approx(0.5, abs=1e-12)
    xs, vals = overlap_profile(UNIFORM, 0.5, 1 / 64)
    assert abs(xs[np.argmin(vals), 0]) == pytest.approx(0.5)
    np.testing.assert_allclose(vals, 1 - np.abs(xs[:, 0]), atol=1e-12)


def test_eta0_atomic_off_lattice():
    assert eta0(SYM, 0.5, 0.25) == 0.0
    # even a grid that only contains lattice shifts finds the zero
    assert eta0(atoms([0.0, 0.5], [0.5, 0.5]), 0.5, 0.5) == 0.0


def test_eta0_zero_shift_is_one():
    _, vals = overlap_profile(UNIFORM, 0.5, 1 / 16)
    xs = displacement_grid(1, 0.5, 1 / 16)
    assert vals[np.flatnonzero(xs[:, 0] == 0)[0]] == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.05, 1.0), min_size=4, max_size=40))
def test_eta0_monotone_in_delta_and_grid(cells):
    g = grid_density([0.0], 1 / 32, cells)
    g = scale(g, 1 / g.total_mass)
    small = eta0(g, 0.25, 1 / 16)
    big = eta0(g, 0.5, 1 / 16)
    finer = eta0(g, 0.5, 1 / 32)
    assert big <= small + 1e-15
    assert finer <= big + 1e-15


def test_eta0_refinement():
    g = add(uniform(0, 1, 1 / 128, mass=0.7), uniform(2, 2.25, 1 / 128, mass=0.3))
    coarse = eta0(g, 0.5, 1 / 8)
    fine = eta0(g, 0.5, 1 / 64)
    assert fine <= coarse + 1e-15


# ---------------------------------------------------------------------------
# sufficient conditions


def test_th22_examples():
    assert check_th22(triplet(UNIFORM), delta=0.5).th22_holds
    assert not check_th22(triplet(SYM), delta=0.5).th22_holds
    lattice = atoms([-1.0, 0.0, 1.0], [1 / 3] * 3)
    assert not check_th22(triplet(lattice), delta=0.9).th22_holds
    heavy = LevyTriplet([0.0], [[0.0]], stable_like(), cutoff=0.5, infinite_activity=True)
    rep = check_th22(heavy, eps=0.5, delta=0.5, grid_step=1 / 64)
    assert rep.th22_holds and rep.eta0 > 0


def test_ac_mass_examples():
    assert ac_mass_of_power(SYM, 3) == 0.0
    mixed = add(atoms([1.0], [0.5]), uniform(0, 1, 1 / 64, mass=0.5))
    assert ac_mass_of_power(mixed, 2) == pytest.approx(0.75, abs=1e-15)
    assert ac_mass_of_power(UNIFORM, 1) == pytest.approx(1.0, abs=1e-12)


def test_ac_fraction_tends_to_one():
    mixed = add(atoms([1.0], [0.9]), uniform(0, 1, 1 / 64, mass=0.1))
    fr = [ac_mass_of_power(mixed, l) / mixed.total_mass**l for l in (1, 10, 100)]
    assert fr[0] < fr[1] < fr[2] and fr[2] > 0.9999


def test_ex2_cond2_examples():
    assert check_ex2_cond2(SYM, 1, 0.5, 0.25) == 0.0
    assert check_ex2_cond2(UNIFORM, 2, 0.5, 1 / 32) > 0
    sliver = add(atoms([0.0, 1.0], [0.45, 0.45]), uniform(0, 0.1, 1 / 800, mass=0.1))
    assert check_ex2_cond2(sliver, 3, 0.05, 0.05 / 8) > 0


# ---------------------------------------------------------------------------
# decision


def test_decide_uniform():
    rep = decide_coupling_property(triplet(UNIFORM))
    assert rep.verdict is Verdict.COUPLING
    assert rep.witness.startswith("ex2(1)")
    assert rep.ex2_cond1[0] == 1


def test_decide_poisson_on_line():
    rep = decide_coupling_property(triplet(dirac(1.0)))
    assert rep.verdict is Verdict.NO_COUPLING


def test_decide_gaussian():
    rep = decide_coupling_property(triplet(SYM, gaussian=1.0))
    assert rep.verdict is Verdict.COUPLING
    assert rep.witness.startswith("gaussian")


def test_decide_degenerate_gaussian_not_witness():
    levy = atoms([[1.0, 0.0], [0.0, 1.0]], [0.5, 0.5], dim=2)
    t = LevyTriplet([0.0, 0.0], [[1.0, 0.0], [0.0, 0.0]], levy)
    rep = decide_coupling_property(t)
    assert rep.verdict is Verdict.INCONCLUSIVE
    assert any("rank" in n for n in rep.notes)


def test_decide_infinite_activity_atomic_inconclusive():
    t = LevyTriplet([0.0], [[0.0]], atoms([0.5, 1.0], [2.0, 1.0]), cutoff=0.25, infinite_activity=True)
    assert decide_coupling_property(t).verdict is Verdict.INCONCLUSIVE


def test_decide_ex2_cond2_only():
    # a density too thin to give a positive overlap at l = 1 for delta = 0.5,
    # but whose self-convolutions spread out
    sliver = add(atoms([0.0], [0.5]), uniform(0, 0.25, 1 / 64, mass=0.5))
    rep = decide_coupling_property(triplet(sliver))
    assert rep.verdict is Verdict.COUPLING


def test_drift_only_is_no_coupling():
    t = LevyTriplet([1.0], [[0.0]], zero_measure(1))
    assert decide_coupling_property(t).verdict is Verdict.NO_COUPLING


def test_verdicts_agree_with_semigroup():
    lazy = atoms([-1.0, 0.0, 1.0], [1 / 3] * 3)
    assert decide_coupling_property(triplet(lazy)).verdict is Verdict.NO_COUPLING
    for t in (1.0, 16.0, 64.0):
        s = build_series(lazy, 1.0, t)
        lo, hi = cp_tv(s, 0.0, math.sqrt(2) / 4)
        assert lo <= 2 * (1 - s.tail_mass) <= hi
    u = uniform(0, 1, 1 / 16)
    assert decide_coupling_property(triplet(u)).verdict is Verdict.COUPLING
    vals = [cp_tv(build_series(u, 1.0, t), 0.0, 0.5)[1] for t in (1.0, 16.0, 256.0)]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < 0.1


def test_report_to_dict():
    d = decide_coupling_property(triplet(UNIFORM)).to_dict()
    assert d["verdict"] == "Coupling"
    assert d["ex2_cond1"] == {"l": 1, "ac_mass": pytest.approx(1.0)}
    assert d["grid_step"] == 0.5 / 32


def test_default_grid_step_follows_density_lattice():
    from levycoupling.criteria import default_grid_step

    assert default_grid_step(SYM, 0.5) == 0.5 / 32
    assert default_grid_step(uniform(0, 1, 1 / 16), 0.5) == 1 / 16
    assert default_grid_step(uniform(0, 1, 1 / 512), 0.5) == 1 / 64
    with pytest.raises(ValueError, match="grid_step"):
        default_grid_step(uniform(0, 4, 1.0), 0.5)
