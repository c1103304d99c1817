import cmath
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from resolvent_lab.discretization import ConvolutionOperator, build_grid, negative_laplacian
from resolvent_lab.kernels import (
    HANKEL_SEAM,
    KernelDomainError,
    Side,
    SingularityError,
    SpectralPoint,
    free_kernel,
    hankel_first_kind,
    kernel_bound_ratio,
    kernel_bound_sweep,
    sqrt_upper,
)


def test_sqrt_branch_examples():
    assert sqrt_upper(SpectralPoint(-1)) == pytest.approx(1j)
    assert sqrt_upper(SpectralPoint(4, Side.PLUS)) == 2
    assert sqrt_upper(SpectralPoint(4, Side.MINUS)) == -2
    assert sqrt_upper(SpectralPoint(1j)) == pytest.approx(cmath.exp(1j * math.pi / 4))


def test_spectral_point_invariants():
    with pytest.raises(KernelDomainError):
        SpectralPoint(2.0)
    with pytest.raises(KernelDomainError):
        SpectralPoint(-1.0, Side.PLUS)
    with pytest.raises(KernelDomainError):
        SpectralPoint(1 + 1j, Side.MINUS)
    assert SpectralPoint.at(3.0).side is Side.PLUS
    assert SpectralPoint.at(3.0).conjugate().side is Side.MINUS


@given(st.complex_numbers(max_magnitude=1e4, allow_nan=False, allow_infinity=False))
def test_sqrt_upper_property(z):
    s = SpectralPoint.at(z)
    w = sqrt_upper(s)
    assert w.imag >= 0
    assert w * w == pytest.approx(z, rel=1e-12, abs=1e-12)


@given(st.floats(1e-3, 1e3), st.floats(1e-9, 1e-6))
def test_sqrt_one_sided_continuity(lam, eps):
    above = sqrt_upper(SpectralPoint(complex(lam, eps)))
    below = sqrt_upper(SpectralPoint(complex(lam, -eps)))
    assert abs(above - sqrt_upper(SpectralPoint(lam, Side.PLUS))) < 1e-5 * (1 + 1 / math.sqrt(lam))
    assert abs(below - sqrt_upper(SpectralPoint(lam, Side.MINUS))) < 1e-5 * (1 + 1 / math.sqrt(lam))


def test_hankel_against_oracle(frozen):
    for row in frozen["hankel"]:
        w = complex(*row["w"])
        ref = complex(*row["value"])
        got = hankel_first_kind(row["nu"], w)
        assert abs(got - ref) <= 1e-10 * abs(ref), (row["nu"], w, got, ref)


def test_hankel_seam_continuity(frozen):
    # both sides of the series/asymptotic seam against the oracle
    import mpmath

    for nu in (0, 1, 2):
        for w in (HANKEL_SEAM * (1 - 1e-9), HANKEL_SEAM * (1 + 1e-9), HANKEL_SEAM + 0.3j):
            ref = complex(mpmath.hankel1(nu, w))
            assert abs(hankel_first_kind(nu, w) - ref) <= 1e-10 * abs(ref)


def test_hankel_half_integer_closed_form():
    assert hankel_first_kind(0.5, math.pi) == pytest.approx(1j * math.sqrt(2) / math.pi, abs=1e-14)
    mags = [abs(hankel_first_kind(0.5, 1j * t)) * math.exp(t) * math.sqrt(t) for t in (5.0, 10.0, 20.0, 40.0)]
    assert np.ptp(mags) < 1e-12


def test_hankel_errors():
    with pytest.raises(SingularityError):
        hankel_first_kind(0.5, 0)
    with pytest.raises(KernelDomainError):
        hankel_first_kind(0.25, 1.0)
    with pytest.raises(KernelDomainError):
        hankel_first_kind(1, 1 - 1j)


def test_free_kernel_examples():
    assert free_kernel(3, SpectralPoint(-1), 1.0) == pytest.approx(math.exp(-1) / (4 * math.pi), rel=1e-14)
    assert free_kernel(3, SpectralPoint(4, Side.PLUS), math.pi) == pytest.approx(1 / (4 * math.pi**2), rel=1e-13)
    assert free_kernel(3, SpectralPoint(0, Side.PLUS), 2.0) == pytest.approx(1 / (8 * math.pi), rel=1e-14)
    with pytest.raises(SingularityError):
        free_kernel(3, SpectralPoint(-1), 0.0)
    with pytest.raises(KernelDomainError):
        free_kernel(4, SpectralPoint(-1), 1.0)


def test_free_kernel_against_oracle(frozen):
    for row in frozen["kernel"]:
        s = SpectralPoint(complex(*row["z"]), Side(row["side"]))
        ref = complex(*row["value"])
        got = complex(free_kernel(row["n"], s, row["r"]))
        assert abs(got - ref) <= 1e-11 * abs(ref), row


@given(st.sampled_from([3, 5]), st.floats(1e-2, 1e2), st.floats(0.05, 20.0))
def test_conjugation_symmetry(n, lam, r):
    plus = free_kernel(n, SpectralPoint(lam, Side.PLUS), r)
    minus = free_kernel(n, SpectralPoint(lam, Side.MINUS), r)
    assert minus == pytest.approx(np.conj(plus), rel=1e-12, abs=1e-300)


@given(st.floats(1e-3, 1e3), st.floats(0, 2 * math.pi), st.floats(1e-3, 1e2))
def test_bound_ratio_n3(mod, arg, r):
    z = mod * cmath.exp(1j * arg)
    s = SpectralPoint.at(complex(round(z.real, 12), round(z.imag, 12)))
    ratio = float(kernel_bound_ratio(3, s, r))
    assert math.isfinite(ratio)
    assert ratio <= 1 / (4 * math.pi) * (1 + 1e-12)


def test_bound_ratio_example():
    assert float(kernel_bound_ratio(3, SpectralPoint(-1), 1.0)) == pytest.approx(math.exp(-1) / (8 * math.pi), rel=1e-13)


@pytest.mark.parametrize("n", [3, 5])
def test_bound_sweep_finite(n):
    sup, where = kernel_bound_sweep(n, np.geomspace(1e-2, 1e2, 40), np.geomspace(1e-2, 1e2, 40))
    print(f"n={n}: empirical sup of the kernel bound ratio {sup:.5f} at {where}")
    assert math.isfinite(sup) and sup > 0


def test_helmholtz_consistency():
    # (-Delta_h - z) applied to R0(z) phi returns phi away from the box faces; error shrinks with h
    z = -1.0
    errors = []
    for N in (13, 17, 25):
        g = build_grid(3, N, 4.0)
        phi = np.exp(-np.sum(g.points**2, axis=1))
        u = ConvolutionOperator(g, SpectralPoint(z)).matvec(phi.astype(complex))
        lhs = negative_laplacian(g) @ u - z * u
        inner = np.all(np.abs(g.points) <= 2.0, axis=1)
        errors.append(float(np.max(np.abs(lhs[inner] - phi[inner]))))
    assert errors[2] < errors[1] < errors[0]
    assert errors[2] < 0.05
