"""Birman-Schwinger operators, the exceptional set, and perturbed resolvents.

For V = V1 V2 the weighted operator K(z) = V1 R0(z) V2 is supported on
supp V; every routine here works on that block, which carries the whole
nonzero spectrum of K and the whole correction R - R0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.optimize

from .discretization import (
    DiscreteOperator,
    GridModel,
    PotentialField,
    assemble_free_resolvent,
    free_resolvent_block,
)
from .kernels import Side, SpectralPoint, check_dimension
from .lorentz import GridFunction


class BSDomainError(ValueError):
    pass


class NumericError(RuntimeError):
    pass


class ExceptionalPointError(RuntimeError):
    """Raised when z is (numerically) in the exceptional set; carries the smallest singular value."""

    def __init__(self, message, sigma_min=None, z=None):
        super().__init__(message)
        self.sigma_min = sigma_min
        self.z = z


# rcond of I + R0 V below which a solve is refused
RCOND_FLOOR = 1e-12
# on the real axis the spectrum of H can be hit exactly, so a much looser floor flags exceptional points
REAL_AXIS_RCOND_FLOOR = 1e-6


@dataclass(frozen=True)
class SplitExponent:
    """Split s of V = |V|^{s/2} * sgn(V)|V|^{1-s/2} and its Lorentz exponents."""

    s: float = 1.0
    n: int = 3

    def __post_init__(self):
        if not 0.5 < self.s < 1.5:
            raise BSDomainError(f"split exponent must lie in (1/2, 3/2), got {self.s}")
        check_dimension(self.n)

    @property
    def p_s(self) -> float:
        return 2.0 * self.n / (self.n + 2.0 * (2.0 - self.s))

    @property
    def q_s(self) -> float:
        return 2.0 * self.n / (self.n - 2.0 * self.s)

    @property
    def dual(self) -> "SplitExponent":
        return SplitExponent(2.0 - self.s, self.n)


def _point(lam: float) -> SpectralPoint:
    # negative energies are interior points; [0, inf) is approached from above
    return SpectralPoint(complex(lam), Side.INTERIOR if lam < 0 else Side.PLUS)


def _check_split(V: PotentialField, split: SplitExponent):
    if not math.isclose(V.s, split.s, rel_tol=0, abs_tol=1e-14):
        raise BSDomainError(f"potential is factorised with s={V.s}, operator requested s={split.s}")
    v1v2 = V.V1 * V.V2
    if np.max(np.abs(v1v2 - V.values), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(V.values), initial=0.0)):
        raise BSDomainError("V1 * V2 does not reproduce V")


def support_block(V: PotentialField, s: SpectralPoint, split: Optional[SplitExponent] = None, rule="zeta"):
    """(support indices, m x m block of K) for K = diag(V1) R0 diag(V2)."""
    split = split or SplitExponent(V.s, V.grid.n)
    _check_split(V, split)
    idx = V.support
    r0 = free_resolvent_block(V.grid, s, idx, idx, rule)
    return idx, V.V1[idx][:, None] * r0 * V.V2[idx][None, :]


def weighted_kernel(
    V: PotentialField, s: SpectralPoint, split: Optional[SplitExponent] = None, g: Optional[GridModel] = None
) -> DiscreteOperator:
    """Full matrix diag(V1) R0(z) diag(V2) on the grid."""
    g = g or V.grid
    if g is not V.grid and (g.n, g.N, g.L) != (V.grid.n, V.grid.N, V.grid.L):
        raise BSDomainError("potential is sampled on a different grid")
    split = split or SplitExponent(V.s, g.n)
    _check_split(V, split)
    matrix = np.zeros((g.size, g.size), dtype=complex)
    idx, block = support_block(V, s, split)
    matrix[np.ix_(idx, idx)] = block
    return DiscreteOperator(matrix, g.weights, g.weights, f"K_{split.s:g}({s.z:.6g},{s.side.value})", g)


def _order(values: np.ndarray) -> np.ndarray:
    # descending modulus, ties broken by (Re, Im) so the order is reproducible
    return np.lexsort((np.round(values.imag, 12), np.round(values.real, 12), -np.round(np.abs(values), 12)))


def eigenvalues_sorted(matrix: np.ndarray) -> np.ndarray:
    try:
        ev = scipy.linalg.eigvals(matrix, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(
            f"eigensolver failed on a {matrix.shape} matrix (max |entry| {np.nanmax(np.abs(matrix)):.3g}): {exc}"
        ) from exc
    return ev[_order(ev)]


def bs_spectrum(K) -> np.ndarray:
    """All eigenvalues of K, descending modulus.

    Indices whose row and column both vanish contribute exact zeros and are
    split off before the dense eigensolve.
    """
    matrix = K.matrix if isinstance(K, DiscreteOperator) else np.asarray(K)
    if not np.all(np.isfinite(matrix)):
        raise NumericError("Birman-Schwinger matrix has non-finite entries")
    active = np.flatnonzero(np.any(matrix != 0, axis=0) | np.any(matrix != 0, axis=1))
    ev = np.zeros(matrix.shape[0], dtype=complex)
    if active.size:
        ev[: active.size] = eigenvalues_sorted(matrix[np.ix_(active, active)])
    return ev[_order(ev)]


def bs_distance(V: PotentialField, lam: float, split: Optional[SplitExponent] = None, tol: float = 0.05):
    """(min_j |mu_j + 1|, number of mu_j with |mu_j + 1| < tol) at energy lam."""
    if V.is_zero:
        return 1.0, 0
    _, block = support_block(V, _point(lam), split)
    dist = np.abs(eigenvalues_sorted(block) + 1.0)
    return float(dist.min()), int(np.sum(dist < tol))


@dataclass
class Candidate:
    lam: float
    bs_distance: float
    kernel_dim: int
    confirmed_distance: Optional[float] = None


@dataclass
class ExceptionalReport:
    candidates: list
    scan_range: tuple
    tolerance: float
    split: float
    profile: list = field(default_factory=list)

    @property
    def energies(self) -> list:
        return [c.lam for c in self.candidates]


def exceptional_scan(
    V: PotentialField,
    interval,
    steps: int = 41,
    split: Optional[SplitExponent] = None,
    g: Optional[GridModel] = None,
    tol: float = 0.05,
    confirm: Optional[PotentialField] = None,
    refine: bool = True,
) -> ExceptionalReport:
    """Scan d(lam) = min_j |mu_j(lam) + 1| and report its local minima below ``tol``.

    Each local minimum is polished by a bounded scalar minimisation between its
    grid neighbours.  When ``confirm`` (the same potential on a refined grid) is
    given, a candidate is kept only if it is also below ``tol`` there.
    """
    lam0, lam1 = map(float, interval)
    if not lam0 < lam1:
        raise BSDomainError("scan interval must satisfy lam0 < lam1")
    if g is not None and (g.n, g.N, g.L) != (V.grid.n, V.grid.N, V.grid.L):
        raise BSDomainError("potential is sampled on a different grid")
    split = split or SplitExponent(V.s, V.grid.n)
    lams = np.linspace(lam0, lam1, steps)
    report = ExceptionalReport([], (lam0, lam1), tol, split.s)
    if V.is_zero:
        report.profile = [(float(l), 1.0) for l in lams]
        return report
    d = np.array([bs_distance(V, l, split, tol)[0] for l in lams])
    report.profile = list(zip(map(float, lams), map(float, d)))
    for i in range(steps):
        left = d[i - 1] if i > 0 else math.inf
        right = d[i + 1] if i < steps - 1 else math.inf
        if not (d[i] <= left and d[i] <= right and d[i] < 2 * tol):
            continue
        lam_best, d_best = lams[i], d[i]
        if refine:
            lo, hi = lams[max(i - 1, 0)], lams[min(i + 1, steps - 1)]
            res = scipy.optimize.minimize_scalar(
                lambda l: bs_distance(V, l, split, tol)[0], bounds=(lo, hi), method="bounded",
                options={"xatol": 1e-6 * max(1.0, abs(hi - lo))},
            )
            if res.fun < d_best:
                lam_best, d_best = float(res.x), float(res.fun)
        if d_best >= tol:
            continue
        dim = bs_distance(V, lam_best, split, tol)[1]
        cand = Candidate(float(lam_best), float(d_best), dim)
        if confirm is not None:
            cand.confirmed_distance = bs_distance(confirm, lam_best, SplitExponent(confirm.s, confirm.grid.n), tol)[0]
            if cand.confirmed_distance >= tol:
                continue
        report.candidates.append(cand)
    report.candidates.sort(key=lambda c: c.lam)
    return report


# ---------------------------------------------------------------- perturbed resolvent


def _free(g: GridModel, s: SpectralPoint, R0):
    return R0 if R0 is not None else assemble_free_resolvent(g, s)


def _solve_checked(matrix, rhs, z):
    lu, piv = scipy.linalg.lu_factor(matrix, check_finite=True)
    anorm = np.linalg.norm(matrix, 1)
    rcond = scipy.linalg.lapack.zgecon(lu.astype(complex), anorm)[0]
    floor = REAL_AXIS_RCOND_FLOOR if complex(z).imag == 0 else RCOND_FLOOR
    if rcond < floor:
        sigma = float(np.linalg.svd(matrix, compute_uv=False)[-1]) if matrix.shape[0] <= 4000 else rcond * anorm
        raise ExceptionalPointError(f"I + R0 V is numerically singular at z={z} (rcond {rcond:.3g})", sigma, z)
    return scipy.linalg.lu_solve((lu, piv), rhs)


@dataclass
class ResolventSolve:
    """u = R(z) f together with the pieces of the second resolvent identity."""

    u: GridFunction
    r0f: np.ndarray
    r0vu: np.ndarray

    @property
    def alternative(self) -> np.ndarray:
        """R0 f - R0 V u, which equals u exactly when u solves (I + R0 V) u = R0 f."""
        return self.r0f - self.r0vu

    def identity_residual(self) -> float:
        """max |u + R0 V u - R0 f| relative to max |R0 f|."""
        scale = max(np.max(np.abs(self.r0f)), 1e-300)
        return float(np.max(np.abs(self.u.values + self.r0vu - self.r0f)) / scale)


def perturbed_resolvent(
    V: PotentialField, s: SpectralPoint, f: GridFunction, g: Optional[GridModel] = None, R0: Optional[DiscreteOperator] = None
) -> ResolventSolve:
    """Solve (I + R0(z) V) u = R0(z) f.

    The system is reduced to supp V: with S the support, u_S solves
    (I + R0_SS V_S) u_S = (R0 f)_S and u = R0 f - R0[:, S] V_S u_S.
    """
    g = g or V.grid
    A0 = _free(g, s, R0)
    r0f = A0.matvec(np.asarray(f.values, dtype=complex))
    if V.is_zero:
        return ResolventSolve(GridFunction(r0f, g.weights), r0f, np.zeros_like(r0f))
    idx = V.support
    vS = V.values[idx]
    system = np.eye(idx.size) + A0.matrix[np.ix_(idx, idx)] * vS[None, :]
    uS = _solve_checked(system, r0f[idx], s.z)
    r0vu = A0.matrix[:, idx] @ (vS * uS)
    u = r0f - r0vu
    return ResolventSolve(GridFunction(u, g.weights), r0f, r0vu)


def perturbed_resolvent_full(
    V: PotentialField, s: SpectralPoint, f: GridFunction, g: Optional[GridModel] = None, R0: Optional[DiscreteOperator] = None
) -> ResolventSolve:
    """Same solve on the full N^n system (reference path for the reduced solver)."""
    g = g or V.grid
    A0 = _free(g, s, R0)
    r0f = A0.matvec(np.asarray(f.values, dtype=complex))
    system = np.eye(g.size) + A0.matrix * V.values[None, :]
    u = _solve_checked(system, r0f, s.z)
    return ResolventSolve(GridFunction(u, g.weights), r0f, A0.matrix @ (V.values * u))


def resolvent_operator(
    V: PotentialField, s: SpectralPoint, g: Optional[GridModel] = None, R0: Optional[DiscreteOperator] = None
) -> DiscreteOperator:
    """Matrix of R(z) = (I + R0 V)^{-1} R0 = R0 - R0[:, S] V_S (I + R0_SS V_S)^{-1} R0[S, :]."""
    g = g or V.grid
    A0 = _free(g, s, R0)
    if V.is_zero:
        return A0.with_matrix(A0.matrix.copy(), f"R({s.z:.6g},{s.side.value})")
    idx = V.support
    vS = V.values[idx]
    system = np.eye(idx.size) + A0.matrix[np.ix_(idx, idx)] * vS[None, :]
    corr = _solve_checked(system, A0.matrix[idx, :], s.z)
    matrix = A0.matrix - A0.matrix[:, idx] @ (vS[:, None] * corr)
    return A0.with_matrix(matrix, f"R({s.z:.6g},{s.side.value})")


@dataclass
class BoundaryValue:
    operator: DiscreteOperator
    discrepancy: float  # max entry distance to the direct side-marked assembly
    level_discrepancies: list  # same distance after 0, 1, ..., levels extrapolation steps
    increments: list  # max |R(eps_k) - R(eps_{k-1})|


def boundary_value(
    V: PotentialField,
    lam: float,
    eps0: float = 0.1,
    levels: int = 4,
    g: Optional[GridModel] = None,
    side: Side = Side.PLUS,
) -> BoundaryValue:
    """R(lam +- i0) by Richardson extrapolation of R(lam +- i eps_k), eps_k = eps0 2^-k.

    The extrapolated operator is compared entrywise with the resolvent built
    directly from the side-marked free kernel.
    """
    if lam < 0:
        raise BSDomainError("boundary values are taken on [0, inf)")
    side = Side(side)
    if side is Side.INTERIOR:
        raise BSDomainError("boundary_value needs side plus or minus")
    g = g or V.grid
    sign = 1.0 if side is Side.PLUS else -1.0
    seq = []
    for k in range(levels + 1):
        eps = eps0 * 2.0**-k
        seq.append(resolvent_operator(V, SpectralPoint(complex(lam, sign * eps)), g).matrix)
    increments = [float(np.max(np.abs(seq[k] - seq[k - 1]))) for k in range(1, len(seq))]
    if len(increments) >= 2 and increments[-1] > increments[0]:
        raise ExceptionalPointError(
            f"eps-sequence at lam={lam} does not settle (increments {increments[0]:.3g} -> {increments[-1]:.3g})",
            None,
            lam,
        )
    direct = resolvent_operator(V, SpectralPoint(complex(lam), side), g).matrix
    # Neville table for an expansion in integer powers of eps
    row = seq[:1]
    level_disc = [float(np.max(np.abs(row[0] - direct)))]
    table = [seq[0]]
    for k in range(1, levels + 1):
        new = [seq[k]]
        for j in range(1, k + 1):
            fac = 2.0**j
            new.append((fac * new[j - 1] - table[j - 1]) / (fac - 1.0))
        table = new
        level_disc.append(float(np.max(np.abs(table[-1] - direct))))
    best = table[-1]
    op = DiscreteOperator(best, g.weights, g.weights, f"R({lam:g}{'+' if sign > 0 else '-'}i0)", g)
    return BoundaryValue(op, level_disc[-1], level_disc, increments)
