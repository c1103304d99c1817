import math

import numpy as np
import pytest

from resolvent_lab.discretization import (
    DiscreteOperator,
    assemble_hamiltonian,
    build_grid,
    calibrate_sobolev,
    make_potential,
    square_well,
    zero_potential,
)
from resolvent_lab.lorentz import GridFunction, LorentzExponent, lorentz_norm
from resolvent_lab.spectral import (
    Box,
    DensityOperator,
    FreeDirichletCalculus,
    HypothesisViolation,
    MultiplierSpec,
    PartitionError,
    SpectralDomainError,
    apply_multiplier,
    davies_gaffney_check,
    discrete_spectrum,
    dyadic_bump,
    hamiltonian_spectrum,
    heat,
    kernel_values,
    littlewood_paley,
    norm_equivalence_check,
    restriction_check,
    smooth_step,
    spectral_density,
    stein_tomas_check,
)


@pytest.fixture(scope="module")
def small():
    return build_grid(3, 9, 4.0)


@pytest.fixture(scope="module")
def well_spectrum(small):
    return hamiltonian_spectrum(small, make_potential(square_well(10.0, 1.3), small))


def gaussian(g, var=1.0):
    return GridFunction(np.exp(-np.sum(g.points**2, axis=1) / (2 * var)), g.weights)


# ---------------------------------------------------------------- discrete spectrum


def test_free_spectrum_has_no_bound_states(small):
    sd = hamiltonian_spectrum(small)
    assert sd.negative_count == 0
    assert np.array_equal(sd.ac_projector.matrix, np.eye(small.size))


def test_negative_count_matches_shooting(frozen):
    levels = frozen["square_well"]["10.0,1.0"]
    expected = len(levels["s"]) + 3 * len(levels["p"])
    # the p level sits at -0.05; on L = 6 (h = 0.92) it is pushed into the continuum
    g = build_grid(3, 13, 4.0)
    sd = hamiltonian_spectrum(g, make_potential(square_well(10.0, 1.0), g))
    assert sd.negative_count == expected == 4


def test_trace_and_orthonormality(well_spectrum, small):
    H = assemble_hamiltonian(small, make_potential(square_well(10.0, 1.3), small)).matrix
    assert np.sum(well_spectrum.eigenvalues) == pytest.approx(np.trace(H).real, abs=1e-8)
    Phi = well_spectrum.vectors
    gram = Phi.conj().T @ (well_spectrum.weights[:, None] * Phi)
    assert np.max(np.abs(gram - np.eye(small.size))) < 1e-10
    assert np.all(np.diff(well_spectrum.eigenvalues) >= 0)


def test_ac_projector_structure(well_spectrum):
    P = well_spectrum.ac_projector.matrix
    assert well_spectrum.negative_count > 0
    assert np.max(np.abs(P @ P - P)) < 1e-10
    assert np.max(np.abs(P - P.conj().T)) < 1e-10
    assert np.trace(P).real == pytest.approx(well_spectrum.size - well_spectrum.negative_count, abs=1e-8)
    f = np.random.default_rng(0).standard_normal(well_spectrum.size)
    assert np.allclose(well_spectrum.project_ac(f), P @ f, atol=1e-12)


def test_non_hermitian_rejected():
    op = DiscreteOperator(np.array([[0.0, 1.0], [0.0, 0.0]]), np.ones(2), np.ones(2), "nilpotent")
    with pytest.raises(SpectralDomainError):
        discrete_spectrum(op)


def test_spectrum_is_cached(small):
    Hd = assemble_hamiltonian(small)
    assert discrete_spectrum(Hd) is discrete_spectrum(Hd)


# ---------------------------------------------------------------- multipliers


def test_multiplier_identity_and_projection(well_spectrum, small):
    f = gaussian(small)
    one = apply_multiplier(well_spectrum, MultiplierSpec(lambda lam: np.ones_like(lam), "1"), f)
    assert np.max(np.abs(one.values - f.values)) < 1e-10
    ind = MultiplierSpec(lambda lam: (lam < 0).astype(float), "1(-inf,0)")
    P = well_spectrum.function_matrix(np.asarray(ind.F(well_spectrum.eigenvalues)))
    assert np.linalg.matrix_rank(P, tol=1e-8) == well_spectrum.negative_count


def test_multiplier_identity_function_reproduces_H(well_spectrum, small):
    H = assemble_hamiltonian(small, make_potential(square_well(10.0, 1.3), small)).matrix
    f = np.random.default_rng(3).standard_normal(small.size)
    out = apply_multiplier(well_spectrum, MultiplierSpec(lambda lam: lam, "lam"), GridFunction(f, small.weights))
    assert np.max(np.abs(out.values - H @ f)) < 1e-8


def test_unbounded_multiplier_rejected(well_spectrum, small):
    with pytest.raises(SpectralDomainError):
        apply_multiplier(well_spectrum, MultiplierSpec(lambda lam: 1.0 / (lam - lam[0]), "pole"), gaussian(small))


def _heat_exact(g, t):
    r2 = np.sum(g.points**2, axis=1)
    return (1 + 2 * t) ** -1.5 * np.exp(-r2 / (2 * (1 + 2 * t)))


def test_heat_matches_sine_calculus():
    g = build_grid(3, 13, 6.0)
    f = gaussian(g)
    dense = heat(hamiltonian_spectrum(g), f, 0.5).values
    fast = FreeDirichletCalculus(g).apply(lambda lam: np.exp(-0.5 * lam), f)
    assert np.max(np.abs(dense - fast)) < 1e-10


def test_free_heat_gaussian_closed_form():
    # the five-point Laplacian is second order; the error falls with h and is below 3% at h = 0.46
    errors = []
    for N in (13, 25):
        g = build_grid(3, N, 6.0)
        u = FreeDirichletCalculus(g).apply(lambda lam: np.exp(-0.5 * lam), gaussian(g))
        exact = _heat_exact(g, 0.5)
        errors.append(float(np.max(np.abs(u - exact)) / np.max(exact)))
    print(f"heat t=0.5 relative errors at N = 13, 25: {errors}")
    assert errors[1] < errors[0]
    assert errors[1] < 0.03


def test_free_dirichlet_basis_is_orthonormal(small):
    fd = FreeDirichletCalculus(small)
    f = np.random.default_rng(1).standard_normal(small.size)
    c = fd.coefficients(f)
    assert np.allclose(fd.synthesize(c), f, atol=1e-12)
    assert np.sum(np.abs(c) ** 2) == pytest.approx(np.sum(small.weights * f * f), rel=1e-12)
    assert np.allclose(np.sort(fd.eigenvalues), hamiltonian_spectrum(small).eigenvalues, atol=1e-10)


# ---------------------------------------------------------------- Littlewood-Paley


def test_smooth_step_and_bump():
    assert smooth_step(0.5) == 1.0 and smooth_step(2.5) == 0.0
    lam = np.geomspace(1e-3, 1e3, 200)
    total = sum(dyadic_bump(lam * 2.0**-j) for j in range(-15, 15))
    assert np.max(np.abs(total - 1)) < 1e-12
    assert np.all(dyadic_bump(np.array([0.4, 0.5, 2.0, 3.0])) == 0)


def test_lp_eigenvector_hits_at_most_two_blocks(well_spectrum):
    k = int(np.argmin(np.abs(well_spectrum.eigenvalues - 3.0)))
    lp = littlewood_paley(well_spectrum, well_spectrum.eigenvector(k), range(-6, 6))
    nonzero = [j for j, v in lp.block_norms.items() if v > 1e-12]
    assert 1 <= len(nonzero) <= 2


def test_lp_reconstruction_and_square_function(well_spectrum, small):
    f = GridFunction(np.random.default_rng(2).standard_normal(small.size), small.weights)
    top = well_spectrum.eigenvalues[-1]
    lp = littlewood_paley(well_spectrum, f, range(-4, int(math.ceil(math.log2(top))) + 2))
    recon = sum(b.values for b in lp.blocks.values()) + lp.low.values
    assert np.max(np.abs(recon - lp.positive_part.values)) < 1e-8
    sq = lp.square.l2_norm()
    pos = lp.positive_part.l2_norm()
    low = lp.low.l2_norm()
    # at most two blocks overlap at any energy: ||S f||^2 <= ||P f||^2 and >= ||P f||^2 / 2 - low part
    assert sq <= pos * (1 + 1e-12)
    assert sq >= (pos - low) / math.sqrt(2) * (1 - 1e-12)


def test_lp_partition_error(well_spectrum, small):
    with pytest.raises(PartitionError):
        littlewood_paley(well_spectrum, GridFunction(np.random.default_rng(2).standard_normal(small.size), small.weights), range(-2, 1))


# ---------------------------------------------------------------- Davies-Gaffney


def test_dg_rhs_example(small):
    sd = hamiltonian_spectrum(small)
    U1, U2 = Box((-3.5, -3.5, -3.5), (-1.5, 3.5, 3.5)), Box((0.5, -3.5, -3.5), (3.5, 3.5, 3.5))
    assert U1.distance(U2) == 2.0
    row = davies_gaffney_check(sd, U1, U2, [0.5], trials=2)[0]
    assert row.rhs == pytest.approx(math.exp(-2.0), rel=1e-14)
    big = davies_gaffney_check(sd, U1, U2, [1e8], trials=2)[0]
    assert big.rhs == pytest.approx(1.0, abs=1e-7) and big.passed


def test_dg_free_passes_and_block_norm_dominates(small):
    sd = hamiltonian_spectrum(small)
    U1, U2 = Box((-3.5, -3.5, -3.5), (-1.0, 3.5, 3.5)), Box((1.0, -3.5, -3.5), (3.5, 3.5, 3.5))
    rows = davies_gaffney_check(sd, U1, U2, [0.25, 0.5, 1.0, 2.0, 4.0], trials=6, seed=1)
    for row in rows:
        assert row.passed
        assert row.block_norm <= row.rhs * 1.05
        assert row.lhs <= row.block_norm * (1 + 1e-10)


def test_dg_requires_nonnegative(well_spectrum):
    U1, U2 = Box((-3.5,) * 3, (-1.0, 3.5, 3.5)), Box((1.0, -3.5, -3.5), (3.5,) * 3)
    with pytest.raises(HypothesisViolation):
        davies_gaffney_check(well_spectrum, U1, U2, [1.0])


# ---------------------------------------------------------------- spectral density


def test_free_density_diagonal(frozen, small):
    K = kernel_values(spectral_density(make_potential(zero_potential(), small), 1.0, method="factorized"))
    assert np.allclose(np.diag(K).real, frozen["free_density_diag_1"], rtol=1e-14)


def test_density_methods_agree_small(small):
    for V in (make_potential(zero_potential(), small), make_potential(square_well(1.0, 1.0), small)):
        st = spectral_density(V, 2.0, method="stone").matrix
        fa = spectral_density(V, 2.0, method="factorized").matrix
        assert np.max(np.abs(st - fa)) / np.max(np.abs(small.weights)) < 1e-4
        assert np.max(np.abs(fa - fa.conj().T)) < 1e-6 * np.max(np.abs(fa))
        # positive semidefinite up to roundoff
        assert np.linalg.eigvalsh((fa + fa.conj().T) / 2)[0] > -1e-6 * np.max(np.abs(fa))


def test_density_rejects_nonpositive_energy(small):
    with pytest.raises(SpectralDomainError):
        spectral_density(make_potential(zero_potential(), small), 0.0)
    with pytest.raises(SpectralDomainError):
        spectral_density(make_potential(zero_potential(), small), 1.0, method="bogus")


def test_matrix_free_density_matches_dense(small):
    rng = np.random.default_rng(0)
    f = rng.standard_normal(small.size) + 1j * rng.standard_normal(small.size)
    for V in (make_potential(zero_potential(), small), make_potential(square_well(3.0, 1.3), small)):
        M = spectral_density(V, 4.0, method="factorized").matrix
        D = DensityOperator(V, 4.0)
        scale = np.max(np.abs(M @ f))
        assert np.max(np.abs(D.matvec(f) - M @ f)) < 1e-12 * scale
        assert np.max(np.abs(D.rmatvec(f) - M.conj().T @ f)) < 1e-12 * scale


def test_restriction_domain(small):
    with pytest.raises(SpectralDomainError):
        restriction_check(make_potential(zero_potential(), small), [1.0], 1.0)


@pytest.fixture(scope="module")
def restriction_grid():
    # h = 0.3 keeps sqrt(8) h below 1; the h = 1 reference grid cannot resolve lam = 8
    return build_grid(3, 41, 6.0)


def test_free_restriction_scaling(restriction_grid):
    g = restriction_grid
    rows, slope, exponent = restriction_check(
        make_potential(zero_potential(), g), [1, 2, 4, 8], 4 / 3, trials=2, steps=30, matrix_free=True, refine_indicators=2
    )
    ratio = rows[2].norm_lb / rows[0].norm_lb
    print(f"free restriction norms {[round(r.norm_lb, 5) for r in rows]}, slope {slope:.4f}, E'(4)/E'(1) {ratio:.4f}")
    assert exponent == pytest.approx(-0.25)
    assert slope == pytest.approx(-0.25, abs=0.05)
    assert ratio == pytest.approx(4**-0.25, rel=0.15)


def test_well_restriction_scaling(restriction_grid):
    g = restriction_grid
    rows, slope, _ = restriction_check(
        make_potential(square_well(1.0, 1.0), g), [1, 2, 4, 8], 4 / 3, trials=2, steps=30, matrix_free=True,
        refine_indicators=2,
    )
    print(f"well restriction norms {[round(r.norm_lb, 5) for r in rows]}, slope {slope:.4f}")
    assert slope == pytest.approx(-0.25, abs=0.1)


# ---------------------------------------------------------------- norm equivalence, Stein-Tomas, eigenfunctions


def test_norm_equivalence_trivial_cases(small):
    rows = norm_equivalence_check(small, None, [0.0, 0.5, 1.0, 1.4], 2.0)
    for r in rows:
        assert r.forward == pytest.approx(1.0, abs=1e-8) and r.backward == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(SpectralDomainError):
        norm_equivalence_check(small, make_potential(square_well(10.0, 1.3), small), [1.0], 1.0)
    with pytest.raises(SpectralDomainError):
        norm_equivalence_check(small, None, [1.5], 2.0)


def test_norm_equivalence_well_refinement():
    out = {}
    for N in (13, 17):
        g = build_grid(3, N, 6.0)
        out[N] = norm_equivalence_check(g, make_potential(square_well(1.0, 1.0), g), [0.0, 1.0], 5.0)
    print(f"norm equivalence s = 1: {[(N, r[1].forward, r[1].backward) for N, r in out.items()]}")
    for N in out:
        assert out[N][0].forward == pytest.approx(1.0, abs=1e-8)
        assert out[N][1].forward < 10 and out[N][1].backward < 10
    assert out[17][1].forward == pytest.approx(out[13][1].forward, rel=0.05)
    assert out[17][1].backward == pytest.approx(out[13][1].backward, rel=0.05)


def test_stein_tomas_shape():
    g = build_grid(3, 13, 6.0)
    sd = hamiltonian_spectrum(g, make_potential(square_well(1.0, 1.0), g))
    rows, slope, predicted = stein_tomas_check(sd, [1.0, 2.0, 4.0], 4 / 3)
    print(f"Stein-Tomas rows {rows}, slope {slope:.4f} vs {predicted:.4f}")
    assert predicted == pytest.approx(0.75)
    assert slope == pytest.approx(predicted, rel=0.2)


def test_bound_state_lorentz_norms_stable():
    norms = {}
    for N in (13, 17):
        g = build_grid(3, N, 6.0)
        sd = hamiltonian_spectrum(g, make_potential(square_well(10.0, 1.0), g))
        norms[N] = np.array([lorentz_norm(sd.eigenvector(0), LorentzExponent(q, 2.0)) for q in (2.0, 3.0, 6.0)])
    print(f"ground state L^(q,2) norms, q = 2, 3, 6: {norms}")
    assert np.all(np.isfinite(norms[17]))
    # q = 2 is the L^2 normalisation
    assert norms[17][0] == pytest.approx(1.0, abs=1e-10)
    assert np.all(np.abs(norms[17] / norms[13] - 1) < 0.05)


def test_nonnegativity_criterion_gives_no_bound_states():
    g = build_grid(3, 13, 6.0)
    S = 1.05 * calibrate_sobolev(g, trials=500, seed=0).value
    weak = LorentzExponent(1.5, math.inf)
    probe = make_potential(square_well(1.0, 1.5), g)
    unit = lorentz_norm(GridFunction(probe.negative_part, g.weights), weak)
    for scale in (1.0, 0.5):
        V = make_potential(square_well(scale / (S * unit), 1.5), g)
        assert lorentz_norm(GridFunction(V.negative_part, g.weights), weak) <= (1 + 1e-12) / S
        assert hamiltonian_spectrum(g, V).negative_count == 0
