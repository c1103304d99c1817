"""Square-root branch, Hankel functions and the free resolvent kernel.

The kernel of (-Delta - z)^{-1} on R^n is

    R0(z, x, y) = (i/4) (k / (2 pi r))^{n/2-1} H^{(1)}_{n/2-1}(k r),   k^2 = z, Im k >= 0,

with r = |x - y|.  Boundary values on the cut [0, inf) are addressed by a side
marker rather than by a small imaginary shift.
"""

from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class KernelDomainError(ValueError):
    pass


class SingularityError(KernelDomainError):
    pass


SUPPORTED_DIMENSIONS = (3, 5)

# |w| at which integer-order Hankel evaluation switches from the ascending
# series to the large-argument expansion (see _hankel_integer_order)
HANKEL_SEAM = 14.0
# above this imaginary part the ascending series loses too many digits to
# cancellation between J and iY; the Sommerfeld integral is used instead
HANKEL_IM_SWITCH = 1.5


class Side(enum.Enum):
    INTERIOR = "interior"
    PLUS = "plus"
    MINUS = "minus"


@dataclass(frozen=True)
class SpectralPoint:
    """Complex energy with the side of the cut it is attached to."""

    z: complex
    side: Side = Side.INTERIOR

    def __post_init__(self):
        z = complex(self.z)
        side = Side(self.side)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "side", side)
        if side is Side.INTERIOR:
            if z.imag == 0.0 and z.real >= 0.0:
                raise KernelDomainError(f"interior point {z} lies on the cut [0, inf); give a side")
        elif z.imag != 0.0 or z.real < 0.0:
            raise KernelDomainError(f"boundary point {z} must lie on [0, inf)")

    @classmethod
    def at(cls, z: complex) -> "SpectralPoint":
        """Interior point, or the upper boundary value when z is on the cut."""
        z = complex(z)
        if z.imag == 0.0 and z.real >= 0.0:
            return cls(z, Side.PLUS)
        return cls(z, Side.INTERIOR)

    def conjugate(self) -> "SpectralPoint":
        flip = {Side.PLUS: Side.MINUS, Side.MINUS: Side.PLUS, Side.INTERIOR: Side.INTERIOR}
        return SpectralPoint(self.z.conjugate(), flip[self.side])

    def shifted(self, eps: float) -> "SpectralPoint":
        """Interior point z + i*eps (eps > 0 for the plus side, < 0 for minus)."""
        return SpectralPoint(complex(self.z.real, self.z.imag + eps), Side.INTERIOR)


def sqrt_upper(s: SpectralPoint) -> complex:
    """Square root with non-negative imaginary part; +-sqrt(lambda) on the two sides of the cut."""
    if s.side is Side.PLUS:
        return complex(math.sqrt(s.z.real), 0.0)
    if s.side is Side.MINUS:
        return complex(-math.sqrt(s.z.real), 0.0)
    w = cmath.sqrt(s.z)
    return -w if w.imag < 0 else w


def check_dimension(n: int) -> int:
    if int(n) != n or n < 3:
        raise KernelDomainError(f"dimension must be an integer >= 3, got {n}")
    if n not in SUPPORTED_DIMENSIONS:
        raise KernelDomainError(f"dimension {n} not supported (supported: {SUPPORTED_DIMENSIONS})")
    return int(n)


# ---------------------------------------------------------------- Hankel


def _upper(w) -> np.ndarray:
    # normalise -0.0 imaginary parts so negative reals sit on the upper lip
    w = np.asarray(w, dtype=complex)
    return w.real + 1j * np.where(w.imag == 0.0, 0.0, w.imag)


def _hankel_half_integer(l: int, w: np.ndarray) -> np.ndarray:
    total = np.zeros_like(w)
    for k in range(l + 1):
        coef = math.factorial(l + k) / (math.factorial(k) * math.factorial(l - k))
        total = total + (1j**k) * coef / (2.0 * w) ** k
    return np.sqrt(2.0 / (math.pi * w)) * (-1j) ** (l + 1) * np.exp(1j * w) * total


def _series_jy(nu: int, w: complex, terms: int = 80):
    half = w / 2.0
    h2 = -half * half
    j_sum = 0j
    y_sum = 0j
    term = half**nu / math.factorial(nu)
    # digamma at positive integers: psi(m) = -gamma + sum_{j<m} 1/j
    psi_a = -np.euler_gamma
    psi_b = -np.euler_gamma + sum(1.0 / j for j in range(1, nu + 1))
    for k in range(terms):
        j_sum += term
        y_sum += (psi_a + psi_b) * term
        if k > 4 and abs(term) < 1e-18 * max(abs(j_sum), 1e-300):
            break
        psi_a += 1.0 / (k + 1)
        psi_b += 1.0 / (nu + k + 1)
        term = term * h2 / ((k + 1) * (nu + k + 1))
    finite = 0j
    for k in range(nu):
        finite += math.factorial(nu - k - 1) / math.factorial(k) * half ** (2 * k - nu)
    y = (2.0 / math.pi) * j_sum * cmath.log(half) - finite / math.pi - y_sum / math.pi
    return j_sum, y


def _asymptotic_hankel(nu: float, w: complex) -> complex:
    mu = 4.0 * nu * nu
    total = 0j
    term = 1.0 + 0j
    best = math.inf
    for k in range(1, 60):
        if abs(term) > best:
            break
        total += term
        best = abs(term)
        if best < 1e-17 * abs(total):
            break
        term = term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * w) * 1j
    phase = w - nu * math.pi / 2.0 - math.pi / 4.0
    return cmath.sqrt(2.0 / (math.pi * w)) * cmath.exp(1j * phase) * total


def _sommerfeld_hankel(nu: float, w: complex) -> complex:
    # H_nu(w) = (2 / (i pi)) e^{-i nu pi / 2} int_0^inf e^{i w cosh t} cosh(nu t) dt,  Im w > 0
    t_max = math.acosh(max(1.0, 45.0 / w.imag)) + 0.5
    step = min(0.02, 0.25 / (abs(w) * math.sinh(t_max) + 1.0))
    t = np.arange(0.0, t_max + step, step)
    f = np.exp(1j * w * np.cosh(t)) * np.cosh(nu * t)
    integral = step * (np.sum(f) - 0.5 * f[0])
    return 2.0 / (1j * math.pi) * cmath.exp(-0.5j * nu * math.pi) * integral


def _hankel_integer_order(nu: int, w: complex) -> complex:
    if abs(w) > HANKEL_SEAM:
        return _asymptotic_hankel(nu, w)
    if w.imag > HANKEL_IM_SWITCH:
        return _sommerfeld_hankel(nu, w)
    j, y = _series_jy(nu, w)
    return j + 1j * y


def hankel_first_kind(nu: float, w):
    """H^{(1)}_nu(w) for nu in {0, 1/2, 1, 3/2, ...} and Im w >= 0, w != 0.

    Half-integer orders use the terminating closed form.  Integer orders use
    the ascending series of J + iY near the real axis, the Sommerfeld integral
    higher in the upper half-plane and the Hankel expansion for |w| > HANKEL_SEAM.
    """
    two_nu = 2.0 * nu
    if nu < 0 or two_nu != int(two_nu):
        raise KernelDomainError(f"unsupported Hankel order {nu}")
    scalar = np.ndim(w) == 0
    w = np.atleast_1d(_upper(w))
    if np.any(w == 0):
        raise SingularityError("Hankel function is singular at w = 0")
    if np.any(w.imag < 0):
        raise KernelDomainError("argument must lie in the closed upper half-plane")
    if int(two_nu) % 2 == 1:
        out = _hankel_half_integer(int(nu - 0.5), w)
    else:
        out = np.array([_hankel_integer_order(int(nu), complex(v)) for v in w])
    return complex(out[0]) if scalar else out


# ---------------------------------------------------------------- free kernel


@lru_cache(maxsize=None)
def _odd_kernel_coefficients(n: int):
    l = (n - 3) // 2
    coefs = [math.factorial(l + j) / (math.factorial(j) * math.factorial(l - j)) for j in range(l + 1)]
    prefactor = 0.25j * (-1j) ** (l + 1)
    static = math.factorial(2 * l) / (4.0 * math.factorial(l) * 4.0**l * math.pi ** (l + 1))
    return l, coefs, prefactor, static


def free_kernel_k(n: int, k: complex, r):
    """Kernel as a function of the wave number k = sqrt_upper(z) (odd n, elementary form)."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise SingularityError("free kernel is singular at r = 0")
    l, coefs, prefactor, static = _odd_kernel_coefficients(n)
    if k == 0:
        return static / r ** (2 * l + 1) + 0j
    kr = k * r
    total = np.zeros(r.shape, dtype=complex)
    for j, c in enumerate(coefs):
        total += (1j**j) * c / (2.0 * kr) ** j
    return prefactor * k**l / ((2.0 * math.pi * r) ** l * math.pi * r) * np.exp(1j * kr) * total


def free_kernel(n: int, s: SpectralPoint, r):
    """R0(z, x, y) at separation r = |x - y| > 0."""
    n = check_dimension(n)
    return free_kernel_k(n, sqrt_upper(s), r)


def japanese(z: complex) -> float:
    return math.sqrt(1.0 + abs(z) ** 2)


def kernel_bound_ratio(n: int, s: SpectralPoint, r):
    """|R0(z,r)| / ((r^{2-n} + r^{-(n-1)/2}) <z>^{(n-3)/4})."""
    r = np.asarray(r, dtype=float)
    bound = (r ** (2.0 - n) + r ** (-(n - 1) / 2.0)) * japanese(s.z) ** ((n - 3) / 4.0)
    return np.abs(free_kernel(n, s, r)) / bound


def kernel_bound_sweep(n: int, z_moduli, radii, arguments=None):
    """Supremum of kernel_bound_ratio over |z| x r x arg z; returns (sup, argmax tuple)."""
    if arguments is None:
        arguments = np.linspace(0.0, 2.0 * math.pi, 9)[:-1]
    best = (-1.0, None)
    r = np.asarray(radii, dtype=float)
    for modulus in z_moduli:
        for arg in arguments:
            z = modulus * cmath.exp(1j * arg)
            s = SpectralPoint.at(complex(round(z.real, 15), round(z.imag, 15)))
            vals = kernel_bound_ratio(n, s, r)
            i = int(np.argmax(vals))
            if vals[i] > best[0]:
                best = (float(vals[i]), (s.z, float(r[i])))
    return best
