"""Functional calculus of the discrete Hamiltonian and the spectral measure density."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse.linalg as sla

from .birman_schwinger import boundary_value, resolvent_operator
from .discretization import (
    ConvolutionOperator,
    DiscreteOperator,
    GridModel,
    PotentialField,
    assemble_free_resolvent,
    assemble_hamiltonian,
    free_resolvent_block,
    kernel_table,
    lorentz_operator_norm,
)
from .kernels import Side, SpectralPoint
from .lorentz import GridFunction, LorentzExponent


class SpectralDomainError(ValueError):
    pass


class HypothesisViolation(ValueError):
    pass


class PartitionError(ValueError):
    pass


@dataclass(eq=False)
class SpectralData:
    """Eigen-decomposition of a Hermitian grid operator.

    ``vectors`` holds weighted-orthonormal eigenvectors as columns:
    sum_x w(x) conj(phi_j(x)) phi_k(x) = delta_jk.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    weights: np.ndarray
    negative_count: int
    tol_zero: float
    grid: Optional[GridModel] = None
    _ac: Optional[DiscreteOperator] = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    def eigenvector(self, k: int) -> GridFunction:
        return GridFunction(self.vectors[:, k], self.weights)

    @property
    def eigenvectors(self) -> list:
        return [self.eigenvector(k) for k in range(self.size)]

    def coefficients(self, f) -> np.ndarray:
        values = f.values if isinstance(f, GridFunction) else np.asarray(f)
        return self.vectors.conj().T @ (self.weights * values)

    def synthesize(self, coefs) -> np.ndarray:
        return self.vectors @ coefs

    def function_matrix(self, values) -> np.ndarray:
        """Matrix of F(H) from the values F(lambda_k)."""
        return (self.vectors * values[None, :]) @ (self.vectors.conj().T * self.weights[None, :])

    @property
    def ac_projector(self) -> DiscreteOperator:
        """I minus the projections onto the eigenvectors with negative eigenvalues."""
        if self._ac is None:
            bound = self.vectors[:, : self.negative_count]
            matrix = np.eye(self.size) - bound @ (bound.conj().T * self.weights[None, :])
            self._ac = DiscreteOperator(matrix, self.weights, self.weights, "P_ac", self.grid)
        return self._ac

    def project_ac(self, f) -> np.ndarray:
        values = f.values if isinstance(f, GridFunction) else np.asarray(f)
        bound = self.vectors[:, : self.negative_count]
        return values - bound @ (bound.conj().T @ (self.weights * values))


def _hermitian_defect(matrix) -> float:
    return float(np.max(np.abs(matrix - matrix.conj().T), initial=0.0))


def discrete_spectrum(Hd: DiscreteOperator) -> SpectralData:
    """Dense Hermitian eigensolve; the result is cached on ``Hd``."""
    cached = getattr(Hd, "_spectral_data", None)
    if cached is not None:
        return cached
    matrix = Hd.matrix
    scale = float(np.max(np.abs(matrix), initial=0.0))
    if _hermitian_defect(matrix) > 1e-12 * max(scale, 1.0):
        raise SpectralDomainError("discrete_spectrum needs a Hermitian operator")
    w = np.asarray(Hd.domain_weights, dtype=float)
    if not np.allclose(w, w[0]):
        raise SpectralDomainError("non-uniform weights are not supported by the spectral calculus")
    if np.iscomplexobj(matrix) and not np.any(matrix.imag):
        matrix = matrix.real
    evals, evecs = scipy.linalg.eigh(matrix)
    tol_zero = 1e-6 * scale
    sd = SpectralData(
        evals, evecs / math.sqrt(w[0]), w.copy(), int(np.sum(evals < -tol_zero)), tol_zero, Hd.grid
    )
    Hd._spectral_data = sd
    return sd


def hamiltonian_spectrum(g: GridModel, V: Optional[PotentialField] = None) -> SpectralData:
    return discrete_spectrum(assemble_hamiltonian(g, V))


# ---------------------------------------------------------------- free Dirichlet calculus


class FreeDirichletCalculus:
    """Functions of -Delta_h (Dirichlet) applied through the type-I sine transform."""

    def __init__(self, g: GridModel):
        self.grid = g
        j = np.arange(1, g.N + 1)
        one = (2.0 / g.h**2) * (1.0 - np.cos(np.pi * j / (g.N + 1)))
        mesh = np.meshgrid(*([one] * g.n), indexing="ij")
        self.symbol = sum(mesh)

    @property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues in sine-mode order, matching ``coefficients``."""
        return self.symbol.ravel()

    def _dst(self, arr):
        # DST-I with norm="ortho" is an orthogonal involution
        if np.iscomplexobj(arr):
            return scipy.fft.dstn(arr.real, type=1, norm="ortho") + 1j * scipy.fft.dstn(arr.imag, type=1, norm="ortho")
        return scipy.fft.dstn(arr, type=1, norm="ortho")

    def coefficients(self, f) -> np.ndarray:
        """Coordinates in the L^2_w-orthonormal sine basis."""
        g = self.grid
        values = f.values if isinstance(f, GridFunction) else np.asarray(f)
        return math.sqrt(g.cell_volume) * self._dst(values.reshape(g.shape)).ravel()

    def synthesize(self, coefs) -> np.ndarray:
        g = self.grid
        return self._dst(np.asarray(coefs).reshape(g.shape)).ravel() / math.sqrt(g.cell_volume)

    def project_ac(self, f) -> np.ndarray:
        # -Delta_h is positive definite: P_ac is the identity
        return np.array(f.values if isinstance(f, GridFunction) else f, dtype=complex)

    def apply(self, F: Callable, f) -> np.ndarray:
        g = self.grid
        values = f.values if isinstance(f, GridFunction) else np.asarray(f)
        coef = self._dst(values.reshape(g.shape)) * F(self.symbol)
        return self._dst(coef).ravel()

    def abs_d_half(self, f) -> np.ndarray:
        """|D|^{1/2} f = (-Delta_h)^{1/4} f."""
        return self.apply(lambda lam: lam**0.25, f)


# ---------------------------------------------------------------- multipliers


@dataclass
class MultiplierSpec:
    """Scalar function F of the energy; Hormander data is carried as metadata only."""

    F: Callable[[np.ndarray], np.ndarray]
    label: str = ""
    psi: Optional[Callable] = None
    beta: Optional[float] = None


def multiplier_values(sd: SpectralData, m: MultiplierSpec) -> np.ndarray:
    with np.errstate(all="ignore"):
        vals = np.asarray(m.F(sd.eigenvalues), dtype=complex) * np.ones(sd.size)
    if not np.all(np.isfinite(vals)):
        bad = sd.eigenvalues[~np.isfinite(vals)][:3]
        raise SpectralDomainError(f"multiplier {m.label!r} is not finite at eigenvalues {bad}")
    return vals


def apply_multiplier(sd: SpectralData, m: MultiplierSpec, f: GridFunction) -> GridFunction:
    """sum_k F(lambda_k) <f, phi_k> phi_k."""
    vals = multiplier_values(sd, m)
    out = sd.synthesize(vals * sd.coefficients(f))
    return GridFunction(out, sd.weights)


def heat(sd: SpectralData, f: GridFunction, t: float) -> GridFunction:
    return apply_multiplier(sd, MultiplierSpec(lambda lam: np.exp(-t * lam), f"exp(-{t}H)"), f)


def smooth_step(x):
    """C-infinity function equal to 1 for x <= 1 and 0 for x >= 2."""
    x = np.asarray(x, dtype=float)

    def bump(u):
        return np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)

    a = bump(2.0 - x)
    b = bump(x - 1.0)
    return a / (a + b)


def dyadic_bump(lam):
    """phi(lam) = chi(lam) - chi(2 lam); supported in (1/2, 2) and sum_j phi(2^-j lam) = 1 on (0, inf)."""
    return smooth_step(lam) - smooth_step(2.0 * np.asarray(lam, dtype=float))


@dataclass
class LittlewoodPaley:
    square: GridFunction
    blocks: dict
    block_norms: dict
    low: GridFunction
    positive_part: GridFunction
    deficit: float


def littlewood_paley(sd: SpectralData, f: GridFunction, j_range, phi=dyadic_bump, occupied_tol: float = 1e-12):
    """Blocks phi(2^-j H) f for j in j_range, the square function and the low remainder.

    The low remainder is chi(2^{1-j0} H) restricted to positive energies, so
    blocks plus remainder telescope to the positive spectral part of f.
    """
    j0, j1 = int(j_range[0]), int(j_range[-1])
    if j1 < j0:
        raise PartitionError("empty dyadic range")
    coefs = sd.coefficients(f)
    lam = sd.eigenvalues
    positive = lam > sd.tol_zero
    occupied = positive & (np.abs(coefs) > occupied_tol * max(np.max(np.abs(coefs), initial=0.0), 1e-300))
    phis = {j: phi(lam * 2.0**-j) * positive for j in range(j0, j1 + 1)}
    low_symbol = smooth_step(lam * 2.0 ** (1 - j0)) * positive
    total = low_symbol + sum(phis.values())
    deficit = float(np.max(np.abs(total[occupied] - 1.0), initial=0.0))
    if deficit > 1e-10:
        raise PartitionError(
            f"dyadic partition j in [{j0}, {j1}] misses occupied energies (deficit {deficit:.3g}); "
            f"top occupied energy {lam[occupied].max():.4g}"
        )
    blocks = {j: GridFunction(sd.synthesize(p * coefs), sd.weights) for j, p in phis.items()}
    square = np.sqrt(sum(np.abs(b.values) ** 2 for b in blocks.values()))
    norms = {j: b.l2_norm() for j, b in blocks.items()}
    low = GridFunction(sd.synthesize(low_symbol * coefs), sd.weights)
    pos = GridFunction(sd.synthesize(positive * coefs), sd.weights)
    return LittlewoodPaley(GridFunction(square, sd.weights), blocks, norms, low, pos, deficit)


# ---------------------------------------------------------------- Davies-Gaffney


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def mask(self, points) -> np.ndarray:
        return np.all((points >= np.asarray(self.lo) - 1e-12) & (points <= np.asarray(self.hi) + 1e-12), axis=1)

    def distance(self, other: "Box") -> float:
        gap = np.maximum(0.0, np.maximum(np.asarray(other.lo) - self.hi, np.asarray(self.lo) - other.hi))
        return float(np.linalg.norm(gap))


@dataclass
class DGRow:
    t: float
    d: float
    lhs: float
    rhs: float
    block_norm: float
    passed: bool


def davies_gaffney_check(
    sd: SpectralData, U1: Box, U2: Box, t_list, trials: int = 8, seed: int = 0, slack: float = 0.05
) -> list:
    """|<e^{-tH} psi1, psi2>| for random unit psi_i supported in U_i against exp(-d^2/4t).

    ``block_norm`` is the exact norm of chi_{U2} e^{-tH} chi_{U1}, the sup of
    lhs over all admissible pairs.
    """
    g = sd.grid
    if sd.eigenvalues[0] < -sd.tol_zero:
        raise HypothesisViolation(f"H has negative spectrum (lowest eigenvalue {sd.eigenvalues[0]:.4g})")
    pts = g.points
    m1, m2 = U1.mask(pts), U2.mask(pts)
    if not m1.any() or not m2.any():
        raise SpectralDomainError("a box contains no grid points")
    d = U1.distance(U2)
    rng = np.random.default_rng(seed)
    psis = []
    for _ in range(trials):
        pair = []
        for m in (m1, m2):
            v = np.zeros(g.size)
            v[m] = rng.standard_normal(int(m.sum()))
            v /= math.sqrt(np.sum(sd.weights * v * v))
            pair.append(v)
        psis.append(pair)
    rows = []
    sq = np.sqrt(sd.weights)
    for t in t_list:
        decay = np.exp(-t * sd.eigenvalues)
        lhs = 0.0
        for p1, p2 in psis:
            evolved = sd.synthesize(decay * sd.coefficients(p1))
            lhs = max(lhs, abs(np.sum(sd.weights * evolved * p2)))
        # unitary rescaling by sqrt(w) turns the weighted block into a plain matrix block
        block = (sd.vectors[m2] * decay[None, :]) @ sd.vectors[m1].conj().T
        block_norm = float(np.linalg.norm(block * (sq[m2][:, None] * sq[m1][None, :]), 2))
        rhs = math.exp(-d * d / (4.0 * t))
        rows.append(DGRow(float(t), d, float(lhs), rhs, block_norm, bool(lhs <= rhs * (1 + slack))))
    return rows


# ---------------------------------------------------------------- spectral measure density


def _free_density_table(g: GridModel, lam: float) -> np.ndarray:
    # weighted entries by lattice offset, as in kernel_table
    if g.n == 3:
        k = math.sqrt(lam)
        offs = np.arange(-(g.N - 1), g.N) * g.h
        mesh = np.meshgrid(*([offs] * 3), indexing="ij")
        r = np.sqrt(sum(m * m for m in mesh))
        with np.errstate(invalid="ignore", divide="ignore"):
            table = np.where(r > 0, np.sin(k * r) / (4 * math.pi**2 * np.where(r > 0, r, 1.0)), k / (4 * math.pi**2))
        return table * g.cell_volume
    return kernel_table(g, SpectralPoint(complex(lam), Side.PLUS)).imag / math.pi


def free_density_operator(g: GridModel, lam: float) -> DiscreteOperator:
    """E'_{-Delta}(lam) with kernel sin(sqrt(lam) r) / (4 pi^2 r) (n = 3), diagonal sqrt(lam) / (4 pi^2)."""
    if g.n == 3:
        idx = np.arange(g.size)
        block = _gather(g, _free_density_table(g, lam), idx, idx)
        return DiscreteOperator(block.astype(complex), g.weights, g.weights, f"dE0({lam:g})", g)
    plus = assemble_free_resolvent(g, SpectralPoint(complex(lam), Side.PLUS)).matrix
    return DiscreteOperator(plus.imag / math.pi + 0j, g.weights, g.weights, f"dE0({lam:g})", g)


class DensityOperator:
    """Matrix-free factorized E'_H(lam) for grids beyond the dense limit.

    Free pieces are FFT convolutions; V enters only through |supp V| x |supp V|
    solves, so memory is O(N^n + |supp V|^2).  Same matrix as
    spectral_density(..., method="factorized").
    """

    def __init__(self, V: PotentialField, lam: float, g: Optional[GridModel] = None):
        if not lam > 0:
            raise SpectralDomainError("spectral density is evaluated at lam > 0")
        g = g or V.grid
        self.grid = g
        self.tag = f"dEconv({lam:g})"
        self.domain_weights = self.codomain_weights = g.weights
        self._v = V.values
        self._d0 = ConvolutionOperator(g, None, table=_free_density_table(g, lam), tag=f"dE0conv({lam:g})")
        self._S = V.support
        if V.is_zero:
            self._plus = self._minus = None
            return
        vS = self._v[self._S]
        self._plus = self._minus = None
        sp_, sm_ = SpectralPoint(complex(lam), Side.PLUS), SpectralPoint(complex(lam), Side.MINUS)
        self._r0p, self._r0m = ConvolutionOperator(g, sp_), ConvolutionOperator(g, sm_)
        eye = np.eye(self._S.size)
        self._plus = scipy.linalg.lu_factor(eye + free_resolvent_block(g, sp_, self._S, self._S) * vS[None, :])
        self._minus = scipy.linalg.lu_factor(eye + free_resolvent_block(g, sm_, self._S, self._S) * vS[None, :])

    @property
    def shape(self):
        return (self.grid.size, self.grid.size)

    def _scatter(self, y):
        out = np.zeros(self.grid.size, dtype=complex)
        out[self._S] = self._v[self._S] * y
        return out

    def _reduce(self, conv, lu, X):
        # (I + R0 V)^{-1} X with the solve confined to supp V
        return X - conv.matvec(self._scatter(scipy.linalg.lu_solve(lu, X[self._S])))

    def matvec(self, f):
        f = np.asarray(f, dtype=complex)
        if self._plus is None:
            return self._d0.matvec(f)
        r_plus_f = self._reduce(self._r0p, self._plus, self._r0p.matvec(f))
        right = self._d0.matvec(f - self._v * r_plus_f)
        return self._reduce(self._r0m, self._minus, right)

    def rmatvec(self, y):
        # adjoint: (I - R(lam - i0) V) E'_0 (I + V R0(lam + i0))^{-1}, using R0(lam +- i0)^T = R0(lam +- i0)
        y = np.asarray(y, dtype=complex)
        if self._plus is None:
            return self._d0.matvec(y)
        z = y - self._scatter(scipy.linalg.lu_solve(self._plus, self._r0p.matvec(y)[self._S]))
        w = self._d0.matvec(z)
        vw = self._v * w
        return w - self._reduce(self._r0m, self._minus, self._r0m.matvec(vw))


def _gather(g, table, rows, cols):
    ri = np.array(np.unravel_index(rows, g.shape))
    ci = np.array(np.unravel_index(cols, g.shape))
    offs = tuple(ri[ax][:, None] - ci[ax][None, :] + (g.N - 1) for ax in range(g.n))
    return table[offs]


def _inverse_I_plus_R0V(R0: np.ndarray, V: PotentialField, X: np.ndarray) -> np.ndarray:
    # (I + R0 V)^{-1} X reduced to the support S of V
    idx = V.support
    vS = V.values[idx]
    system = np.eye(idx.size) + R0[np.ix_(idx, idx)] * vS[None, :]
    y = scipy.linalg.solve(system, X[idx, :])
    return X - R0[:, idx] @ (vS[:, None] * y)


def spectral_density(
    V: PotentialField, lam: float, g: Optional[GridModel] = None, method: str = "stone", eps0: float = 0.1, levels: int = 4
) -> DiscreteOperator:
    """Matrix of E'_H(lam) (kernel times weight).

    stone:      (R(lam + i0) - R(lam - i0)) / (2 pi i) from extrapolated boundary values
    factorized: (I + R0(lam - i0) V)^{-1} E'_{-Delta}(lam) (I - V R(lam + i0))
    """
    if not lam > 0:
        raise SpectralDomainError("spectral density is evaluated at lam > 0")
    g = g or V.grid
    if method == "stone":
        plus = boundary_value(V, lam, eps0, levels, g, Side.PLUS).operator.matrix
        minus = boundary_value(V, lam, eps0, levels, g, Side.MINUS).operator.matrix
        matrix = (plus - minus) / (2j * math.pi)
    elif method == "factorized":
        dE0 = free_density_operator(g, lam).matrix
        if V.is_zero:
            matrix = dE0
        else:
            r_plus = resolvent_operator(V, SpectralPoint(complex(lam), Side.PLUS), g).matrix
            right = dE0 - dE0 @ (V.values[:, None] * r_plus)
            r0_minus = assemble_free_resolvent(g, SpectralPoint(complex(lam), Side.MINUS)).matrix
            matrix = _inverse_I_plus_R0V(r0_minus, V, right)
    else:
        raise SpectralDomainError(f"unknown density method {method!r}")
    return DiscreteOperator(matrix, g.weights, g.weights, f"dE({lam:g},{method})", g)


def kernel_values(op: DiscreteOperator) -> np.ndarray:
    """Integral kernel behind a weighted matrix: matrix[i, j] / w_j."""
    return op.matrix / op.domain_weights[None, :]


@dataclass
class RestrictionRow:
    lam: float
    norm_lb: float
    predicted_scale: float
    witness_id: str


def restriction_check(
    V: PotentialField, lam_list, p0: float, trials: int = 2, seed: int = 0, steps: int = 30, matrix_free: bool = False,
    refine_indicators: int = 0,
):
    """Lower bounds of ||E'_H(lam)||_{p0 -> p0'} and the log-log slope against lam.

    matrix_free switches to DensityOperator, which is what makes grids fine
    enough to resolve lam ~ 8 affordable.
    """
    n = V.grid.n
    lo, hi = 2.0 * n / (n + 3.0), 2.0 * (n + 1.0) / (n + 3.0)
    # the upper end is the Stein-Tomas endpoint and stays admissible
    if not lo < p0 <= hi:
        raise SpectralDomainError(f"p0 must lie in ({lo:.4g}, {hi:.4g}]")
    p0d = p0 / (p0 - 1.0)
    exponent = n / 2.0 * (1.0 / p0 - 1.0 / p0d) - 1.0
    rows = []
    for lam in lam_list:
        op = DensityOperator(V, lam) if matrix_free else spectral_density(V, lam, method="factorized")
        est = lorentz_operator_norm(
            op, LorentzExponent.lebesgue(p0), LorentzExponent.lebesgue(p0d), trials=trials, seed=seed, steps=steps,
            grid=V.grid, refine_indicators=refine_indicators,
        )
        rows.append(RestrictionRow(float(lam), est.value, float(lam) ** exponent, est.witness_id))
    x = np.log([r.lam for r in rows])
    y = np.log([r.norm_lb for r in rows])
    slope = float(np.polyfit(x, y, 1)[0]) if len(rows) > 1 else float("nan")
    return rows, slope, exponent


# ---------------------------------------------------------------- norm equivalence


def _power_norm(matvec, rmatvec, size, seed=0, iters=200, rtol=1e-10):
    op = sla.LinearOperator((size, size), matvec=lambda x: rmatvec(matvec(x)), dtype=complex)
    val = sla.eigsh(op, k=1, which="LA", return_eigenvectors=False, tol=rtol, maxiter=iters * 10,
                    v0=np.random.default_rng(seed).standard_normal(size) + 0j)[0]
    return math.sqrt(max(val.real, 0.0))


@dataclass
class EquivalenceRow:
    s: float
    forward: float  # ||A^{s/2} B^{-s/2}||
    backward: float  # ||B^{s/2} A^{-s/2}||


def norm_equivalence_check(g: GridModel, V: Optional[PotentialField], s_list, M: float) -> list:
    """L^2 norms of A^{s/2} B^{-s/2} and B^{s/2} A^{-s/2}, A = -Delta_h + M, B = H_h + M."""
    sd = hamiltonian_spectrum(g, V)
    if not M > -sd.eigenvalues[0] + 1.0:
        raise SpectralDomainError(f"shift M={M} must exceed 1 - min spec(H) = {1 - sd.eigenvalues[0]:.4g}")
    free = FreeDirichletCalculus(g)
    rows = []
    for s in s_list:
        if not 0.0 <= s < 1.5:
            raise SpectralDomainError("s must lie in [0, 3/2)")
        a = lambda x, e: free.apply(lambda lam: (lam + M) ** e, x)
        b = lambda x, e: sd.synthesize((sd.eigenvalues + M) ** e * sd.coefficients(x))
        # plain (unweighted) vectors: with uniform weights every operator here is Euclidean-normal
        fwd = _power_norm(lambda x: a(b(x, -s / 2), s / 2), lambda y: b(a(y, s / 2), -s / 2), g.size)
        bwd = _power_norm(lambda x: b(a(x, -s / 2), s / 2), lambda y: a(b(y, s / 2), -s / 2), g.size)
        rows.append(EquivalenceRow(float(s), fwd, bwd))
    return rows


# ---------------------------------------------------------------- Stein-Tomas shape


def stein_tomas_check(sd: SpectralData, a_list, p0: float, trials: int = 2, seed: int = 0, steps: int = 30):
    """||1_{[0,a]}(sqrt H)||_{p0 -> 2} via ||1_{[0,a^2]}(H)||_{p0 -> p0'}^{1/2}, with the fitted exponent."""
    p0d = p0 / (p0 - 1.0)
    rows = []
    for a in a_list:
        ind = ((sd.eigenvalues >= -sd.tol_zero) & (sd.eigenvalues <= a * a)).astype(float)
        op = DiscreteOperator(sd.function_matrix(ind), sd.weights, sd.weights, f"1[0,{a}](sqrtH)", sd.grid)
        est = lorentz_operator_norm(
            op, LorentzExponent.lebesgue(p0), LorentzExponent.lebesgue(p0d), trials=trials, seed=seed, steps=steps
        )
        rows.append((float(a), math.sqrt(est.value)))
    slope = float(np.polyfit(np.log([r[0] for r in rows]), np.log([r[1] for r in rows]), 1)[0])
    return rows, slope, sd.grid.n * (1.0 / p0 - 0.5)
