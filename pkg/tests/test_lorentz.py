import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from resolvent_lab.discretization import (
    assemble_hamiltonian,
    build_grid,
    calibrate_sobolev,
    gradient_norm_sq,
    make_potential,
    square_well,
)
from resolvent_lab.lorentz import (
    GridFunction,
    LorentzDomainError,
    LorentzExponent,
    decreasing_rearrangement,
    lorentz_norm,
    lorentz_norm_gradient,
    radial_shell_function,
    sobolev_constant,
)

values_st = arrays(np.float64, st.integers(1, 40), elements=st.floats(-1e3, 1e3, allow_nan=False))
exp_p = st.floats(1.05, 8.0)


def _pair(vals, seed=0):
    w = np.random.default_rng(seed).uniform(0.1, 2.0, size=len(vals))
    return GridFunction(vals, w)


def test_rearrangement_sorts():
    r = decreasing_rearrangement(GridFunction(np.array([3.0, -1.0, 2.0]), np.ones(3)))
    assert list(r.levels) == [3.0, 2.0, 1.0]
    assert list(r.breakpoints) == [1.0, 2.0, 3.0]


def test_rearrangement_constant():
    f = GridFunction(np.full(5, -2.5 + 0j), np.array([0.5, 1.0, 1.5, 2.0, 3.0]))
    r = decreasing_rearrangement(f)
    assert np.all(r.levels == 2.5)
    assert r.total_measure == pytest.approx(8.0)
    assert r(7.9) == 2.5 and r(8.1) == 0.0


def test_empty_rejected():
    with pytest.raises(LorentzDomainError):
        decreasing_rearrangement(GridFunction(np.array([]), np.array([])))


def test_exponent_domain():
    for p, q in [(1.0, 2.0), (math.inf, 2.0), (2.0, 0.5)]:
        with pytest.raises(LorentzDomainError):
            LorentzExponent(p, q)
    LorentzExponent(2.0, math.inf)


def test_bad_weights():
    with pytest.raises(LorentzDomainError):
        GridFunction(np.ones(3), np.array([1.0, 0.0, 1.0]))


def test_box_indicator_weak_norm():
    f = GridFunction(np.ones(8), np.ones(8))
    assert lorentz_norm(f, LorentzExponent(2.0, math.inf)) == pytest.approx(math.sqrt(8.0), rel=1e-14)


def test_inverse_square_distribution_function():
    f = radial_shell_function(lambda r: r**-2.0, 1e-3, 50.0, 1.005)
    r = decreasing_rearrangement(f)
    for alpha in [0.01, 0.1, 1.0, 10.0, 100.0]:
        measured = float(r.breakpoints[np.searchsorted(-r.levels, -alpha, side="left") - 1])
        assert measured == pytest.approx(4 * math.pi / 3 * alpha**-1.5, rel=0.02)


def test_inverse_square_weak_norm():
    for ratio, tol in [(1.05, 0.06), (1.01, 0.02), (1.002, 0.005)]:
        f = radial_shell_function(lambda r: r**-2.0, 1e-3, 10.0, ratio)
        assert lorentz_norm(f, LorentzExponent(1.5, math.inf)) == pytest.approx((4 * math.pi / 3) ** (2 / 3), rel=tol)


def test_sobolev_constant_values(frozen):
    assert sobolev_constant(3) == pytest.approx(5.478, abs=5e-4)
    assert sobolev_constant(3) == pytest.approx(frozen["sobolev"]["3"], rel=1e-13)
    assert sobolev_constant(4) == pytest.approx(frozen["sobolev"]["4"], rel=1e-13)
    assert sobolev_constant(3) > 0
    with pytest.raises(LorentzDomainError):
        sobolev_constant(2)


@given(values_st, exp_p, st.integers(0, 10**6))
def test_lebesgue_diagonal(vals, p, seed):
    f = _pair(vals, seed)
    top = np.abs(vals).max()
    expected = top * float(np.sum(f.weights * (np.abs(vals) / top) ** p) ** (1 / p)) if top > 0 else 0.0
    r = decreasing_rearrangement(f)
    from resolvent_lab.lorentz import _step_norm

    assert _step_norm(r.levels, r.breakpoints, p, p) == pytest.approx(expected, rel=1e-10, abs=1e-300)
    assert lorentz_norm(f, LorentzExponent.lebesgue(p)) == pytest.approx(expected, rel=1e-12, abs=1e-300)


@given(values_st, exp_p, st.floats(1.0, 10.0) | st.just(math.inf), st.integers(0, 10**6))
def test_permutation_invariance(vals, p, q, seed):
    f = _pair(vals, seed)
    perm = np.random.default_rng(seed).permutation(len(vals))
    g = GridFunction(vals[perm], f.weights[perm])
    e = LorentzExponent(p, q)
    assert lorentz_norm(g, e) == pytest.approx(lorentz_norm(f, e), rel=1e-12, abs=1e-300)


@given(values_st, exp_p, st.floats(1.0, 10.0) | st.just(math.inf), st.complex_numbers(max_magnitude=1e3, allow_nan=False))
def test_homogeneity(vals, p, q, c):
    f = _pair(vals)
    e = LorentzExponent(p, q)
    assert lorentz_norm(f.with_values(c * vals), e) == pytest.approx(abs(c) * lorentz_norm(f, e), rel=1e-10, abs=1e-250)


@given(values_st, exp_p, st.floats(1.0, 6.0), st.floats(1.0, 6.0) | st.just(math.inf), st.integers(0, 10**6))
def test_nesting_in_q(vals, p, q1, q2, seed):
    # raw quasi-norms obey ||f||_{p,q2} <= (q1/p)^{1/q1-1/q2} ||f||_{p,q1} for q1 < q2
    q1, q2 = min(q1, q2), max(q1, q2)
    f = _pair(vals, seed)
    c = (q1 / p) ** (1 / q1 - 1 / q2)
    lhs = lorentz_norm(f, LorentzExponent(p, q2))
    rhs = lorentz_norm(f, LorentzExponent(p, q1))
    assert lhs <= c * rhs * (1 + 1e-10) + 1e-300


def test_raw_nesting_not_monotone_without_constant():
    # indicator: ||1_M||_{p,q} = (p/q)^{1/q} M^{1/p}, which dips below the weak value at q = p e
    f = GridFunction(np.ones(4), np.ones(4))
    assert lorentz_norm(f, LorentzExponent(2.0, 4.0)) < lorentz_norm(f, LorentzExponent(2.0, math.inf))


@given(arrays(np.complex128, st.integers(2, 30), elements=st.complex_numbers(max_magnitude=10, allow_nan=False)), exp_p, st.floats(1.0, 6.0))
@settings(max_examples=40)
def test_gradient_directional_derivative(vals, p, q):
    mod = np.abs(vals)
    if np.min(np.diff(np.sort(mod))) < 1e-3 or mod.min() < 1e-3:
        return
    w = np.linspace(0.5, 1.5, len(vals))
    e = LorentzExponent(p, q)
    norm, g = lorentz_norm_gradient(vals, w, e)
    assert norm == pytest.approx(lorentz_norm(GridFunction(vals, w), e), rel=1e-12)
    h = np.random.default_rng(1).standard_normal(len(vals)) * (1 + 1j)
    eps = 1e-7
    fd = (lorentz_norm(GridFunction(vals + eps * h, w), e) - lorentz_norm(GridFunction(vals - eps * h, w), e)) / (2 * eps)
    assert fd == pytest.approx(float(np.real(np.sum(np.conj(g) * h))), rel=1e-4, abs=1e-6)


def test_holder_defect_reported():
    rng = np.random.default_rng(11)
    worst = 0.0
    for trial in range(200):
        n = 50
        w = rng.uniform(0.1, 1.0, n)
        p1, p2 = rng.uniform(2.0, 6.0, 2)
        p = 1.0 / (1.0 / p1 + 1.0 / p2)
        f = rng.standard_normal(n) * rng.random(n) ** 3
        g = rng.standard_normal(n)
        e, e1, e2 = LorentzExponent(p, math.inf), LorentzExponent(p1, math.inf), LorentzExponent(p2, math.inf)
        ratio = lorentz_norm(GridFunction(f * g, w), e) / (
            lorentz_norm(GridFunction(f, w), e1) * lorentz_norm(GridFunction(g, w), e2)
        )
        worst = max(worst, ratio)
    print(f"empirical weak-Hoelder constant over 200 trials: {worst:.4f}")
    assert np.isfinite(worst) and worst > 0


def test_remark_chain_with_calibrated_constant():
    g = build_grid(3, 13, 6.0)
    cal = calibrate_sobolev(g, trials=500, seed=0)
    S = 1.05 * cal.value
    weak = LorentzExponent(1.5, math.inf)
    rng = np.random.default_rng(5)
    for depth_scale in (1.0, 0.5):
        probe = make_potential(square_well(1.0, 1.5), g)
        norm1 = lorentz_norm(GridFunction(probe.negative_part, g.weights), weak)
        V = make_potential(square_well(depth_scale / (S * norm1), 1.5), g)
        assert lorentz_norm(GridFunction(V.negative_part, g.weights), weak) <= 1.0 / S * (1 + 1e-12)
        H = assemble_hamiltonian(g, V).matrix
        for _ in range(100):
            u = rng.standard_normal(g.size)
            form = float(u @ H @ u) * g.cell_volume
            scale = float(np.sum(u**2) * g.cell_volume) * gradient_norm_sq(g, u)
            assert form >= -1e-6 * scale
