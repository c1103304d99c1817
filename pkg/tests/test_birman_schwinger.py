import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resolvent_lab.birman_schwinger import (
    BSDomainError,
    ExceptionalPointError,
    SplitExponent,
    boundary_value,
    bs_distance,
    bs_spectrum,
    exceptional_scan,
    perturbed_resolvent,
    perturbed_resolvent_full,
    resolvent_operator,
    weighted_kernel,
)
from resolvent_lab.discretization import (
    assemble_free_resolvent,
    build_grid,
    make_potential,
    square_well,
    zero_potential,
)
from resolvent_lab.kernels import Side, SpectralPoint
from resolvent_lab.lorentz import GridFunction


@pytest.fixture(scope="module")
def grid():
    return build_grid(3, 9, 4.0)


def gaussian(g):
    return GridFunction(np.exp(-np.sum(g.points**2, axis=1) / 2).astype(complex), g.weights)


def test_split_exponents():
    sp = SplitExponent(1.0)
    assert (sp.p_s, sp.q_s) == pytest.approx((6 / 5, 6.0))
    assert SplitExponent(0.8).dual.s == pytest.approx(1.2)
    for bad in (0.5, 1.5, 2.0):
        with pytest.raises(BSDomainError):
            SplitExponent(bad)


def test_split_mismatch_rejected(grid):
    V = make_potential(square_well(2.0, 1.3), grid)
    with pytest.raises(BSDomainError):
        weighted_kernel(V, SpectralPoint(-1), SplitExponent(0.8))


def test_weighted_kernel_zero(grid):
    K = weighted_kernel(make_potential(zero_potential(), grid), SpectralPoint(-1))
    assert not np.any(K.matrix)
    assert not np.any(bs_spectrum(K))


def test_weighted_kernel_symmetric_for_sign_definite(grid):
    for V in (make_potential(square_well(3.0, 1.3), grid), make_potential(square_well(-3.0, 1.3), grid)):
        K = weighted_kernel(V, SpectralPoint(-1 + 0.5j)).matrix
        assert np.allclose(K, K.T, atol=1e-15)


def test_top_eigenvalue_linear_in_depth(grid):
    s = SpectralPoint(0.0, Side.PLUS)
    tops = [abs(bs_spectrum(weighted_kernel(make_potential(square_well(d, 1.3), grid), s))[0]) for d in (1.0, 2.0, 5.0)]
    assert tops[1] / tops[0] == pytest.approx(2.0, rel=1e-10)
    assert tops[2] / tops[0] == pytest.approx(5.0, rel=1e-10)


def test_bs_spectrum_diagonal():
    ev = bs_spectrum(np.diag([-1.0, 0.5]))
    assert list(ev) == [-1.0, 0.5]


def test_exceptional_scan_free_is_empty(grid):
    rep = exceptional_scan(make_potential(zero_potential(), grid), (-5.0, 5.0), steps=11)
    assert rep.candidates == []


def test_exceptional_scan_interval_checked(grid):
    with pytest.raises(BSDomainError):
        exceptional_scan(make_potential(square_well(1.0, 1.3), grid), (1.0, 0.0))


def test_negative_candidates_converge_to_bound_states(frozen):
    oracle = frozen["square_well"]["10.0,1.3"]
    errors = []
    for N in (13, 17, 21):
        g = build_grid(3, N, 4.0)
        rep = exceptional_scan(make_potential(square_well(10.0, 1.3), g), (-9.0, -0.5), steps=35)
        assert len(rep.candidates) == 2
        assert [c.kernel_dim for c in rep.candidates] == [1, 3]
        errors.append([abs(rep.energies[0] / oracle["s"][0] - 1), abs(rep.energies[1] / oracle["p"][0] - 1)])
    errors = np.array(errors)
    assert np.all(np.diff(errors, axis=0) < 0)
    assert np.all(errors[-1] < 0.1)


def test_candidates_independent_of_split():
    g = build_grid(3, 11, 4.0)
    lists = []
    dims = []
    for s in (0.8, 1.0, 1.2):
        V = make_potential(square_well(10.0, 1.3), g, s=s)
        rep = exceptional_scan(V, (-9.0, -0.5), steps=25, split=SplitExponent(s))
        lists.append(rep.energies)
        dims.append([c.kernel_dim for c in rep.candidates])
    for other in lists[1:]:
        assert np.allclose(other, lists[0], rtol=1e-3)
    assert dims[0] == dims[1] == dims[2]
    # kernel dimension of K equals that of its adjoint
    V = make_potential(square_well(10.0, 1.3), g)
    K = weighted_kernel(V, SpectralPoint(lists[1][0])).matrix
    d = np.abs(bs_spectrum(K) + 1)
    d_adj = np.abs(bs_spectrum(K.conj().T) + 1)
    assert np.sum(d < 0.05) == np.sum(d_adj < 0.05)


def test_high_energy_distance_bounded_away(grid):
    V = make_potential(square_well(4.0, 1.3), grid)
    d = [bs_distance(V, lam)[0] for lam in (5.0, 10.0, 20.0, 40.0)]
    print(f"d(lam) at lam = 5, 10, 20, 40: {np.round(d, 4)}")
    assert min(d) > 0.3


def test_perturbed_resolvent_free(grid):
    f = gaussian(grid)
    s = SpectralPoint(-1)
    sol = perturbed_resolvent(make_potential(zero_potential(), grid), s, f)
    assert np.allclose(sol.u.values, assemble_free_resolvent(grid, s).matvec(f.values), rtol=0, atol=1e-15)


def test_perturbed_resolvent_identities(grid):
    V = make_potential(square_well(1.0, 1.3), grid)
    s = SpectralPoint(-2.0)
    f = gaussian(grid)
    sol = perturbed_resolvent(V, s, f)
    assert sol.identity_residual() < 1e-10
    assert np.max(np.abs(sol.alternative - sol.u.values)) < 1e-12
    full = perturbed_resolvent_full(V, s, f)
    assert np.max(np.abs(full.u.values - sol.u.values)) < 1e-12 * np.max(np.abs(sol.u.values))
    # direct oracle: (R0^{-1} + V) u = f
    R0 = assemble_free_resolvent(grid, s).matrix
    direct = np.linalg.solve(np.linalg.inv(R0) + np.diag(V.values), f.values)
    assert np.max(np.abs(direct - sol.u.values)) < 1e-8 * np.max(np.abs(direct))


def test_exceptional_point_error_at_bound_state():
    g = build_grid(3, 9, 4.0)
    V = make_potential(square_well(10.0, 1.3), g)
    rep = exceptional_scan(V, (-9.0, -3.0), steps=13)
    lam = rep.candidates[0].lam
    with pytest.raises(ExceptionalPointError):
        perturbed_resolvent(V, SpectralPoint(lam), gaussian(g))


def test_boundary_value_free(grid):
    bv = boundary_value(make_potential(zero_potential(), grid), 1.0, eps0=0.1, levels=4)
    assert bv.discrepancy < 1e-4
    ratios = [a / b for a, b in zip(bv.level_discrepancies, bv.level_discrepancies[1:])]
    print(f"Neville level discrepancies {bv.level_discrepancies}")
    assert all(r >= 2.0 for r in ratios)


def test_boundary_value_conjugation(grid):
    V = make_potential(square_well(2.0, 1.3), grid)
    plus = boundary_value(V, 1.5, levels=2).operator.matrix
    minus = boundary_value(V, 1.5, levels=2, side=Side.MINUS).operator.matrix
    assert np.max(np.abs(minus - plus.conj())) < 1e-12 * np.max(np.abs(plus))


def test_boundary_value_rejects_negative(grid):
    with pytest.raises(BSDomainError):
        boundary_value(make_potential(square_well(2.0, 1.3), grid), -1.0)


def test_first_resolvent_identity_refines():
    residuals = []
    for N in (7, 9, 11):
        g = build_grid(3, N, 3.0)
        V = make_potential(square_well(1.0, 1.0), g)
        f = np.exp(-np.sum(g.points**2, axis=1))
        z, w = SpectralPoint(-1 + 1j), SpectralPoint(-2 + 0.5j)
        Rz, Rw = resolvent_operator(V, z).matrix, resolvent_operator(V, w).matrix
        gap = Rz @ f - Rw @ f - (z.z - w.z) * (Rz @ (Rw @ f))
        residuals.append(float(np.max(np.abs(gap)) / np.max(np.abs(Rz @ f))))
    print(f"first resolvent identity residuals {residuals}")
    assert residuals[2] < residuals[1] < residuals[0]


@given(st.floats(-8.0, -0.2), st.floats(0.5, 4.0))
@settings(max_examples=15, deadline=None)
def test_distance_conjugation_symmetric(lam, depth):
    g = build_grid(3, 7, 3.0)
    V = make_potential(square_well(depth, 1.0), g)
    K = weighted_kernel(V, SpectralPoint(complex(lam, 0.7))).matrix
    Kc = weighted_kernel(V, SpectralPoint(complex(lam, -0.7))).matrix
    assert np.allclose(np.sort_complex(bs_spectrum(Kc)), np.sort_complex(np.conj(bs_spectrum(K))), atol=1e-10)
