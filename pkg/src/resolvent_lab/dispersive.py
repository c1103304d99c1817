"""Schrodinger evolution, Duhamel operators and space-time norms on the grid.

Time dependence is exact in every eigenmode: e^{-itH} acts as the phase
e^{-it lambda_k}.  Only the quadratures over time (the Duhamel integral for
sampled forcings, the outer integrals of mixed norms) discretise time.

Modal calculi used here expose ``eigenvalues``, ``coefficients(f)`` and
``synthesize(c)``: SpectralData for H and FreeDirichletCalculus for -Delta_h.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse.linalg as sla

from .discretization import GridModel, PotentialField, assemble_hamiltonian
from .lorentz import GridFunction, LorentzExponent, lorentz_norm
from .spectral import FreeDirichletCalculus, HypothesisViolation, SpectralData


class DispersiveDomainError(ValueError):
    pass


@dataclass(frozen=True)
class AdmissiblePair:
    p: float
    q: float
    n: int = 3

    @property
    def admissible(self) -> bool:
        return self.p >= 2 and self.q >= 2 and math.isclose(2.0 / self.p, self.n * (0.5 - 1.0 / self.q), abs_tol=1e-12)


def nonadmissible_pair(s: float, n: int = 3):
    """Exponents (q_s, p_s) = (2n/(n-2s), 2n/(n+2(2-s))) of the inhomogeneous L^2_t estimate."""
    lo, hi = n / (2.0 * (n - 1)), (3.0 * n - 4) / (2.0 * (n - 1))
    if not lo - 1e-12 <= s <= hi + 1e-12:
        raise DispersiveDomainError(f"s must lie in [{lo:.4g}, {hi:.4g}]")
    return 2.0 * n / (n - 2.0 * s), 2.0 * n / (n + 2.0 * (2.0 - s))


@dataclass
class EvolutionRecord:
    times: np.ndarray
    slices: np.ndarray  # shape (len(times), grid size)
    weights: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.slices = np.asarray(self.slices)
        if self.slices.shape[0] != self.times.size:
            raise DispersiveDomainError("one slice per time is required")

    def __len__(self):
        return self.times.size

    def slice(self, m: int) -> GridFunction:
        return GridFunction(self.slices[m], self.weights)

    def scaled(self, c) -> "EvolutionRecord":
        return EvolutionRecord(self.times, c * self.slices, self.weights, self.source)

    def l2_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.weights[None, :] * np.abs(self.slices) ** 2, axis=1))


def time_grid(T: float, steps: int) -> np.ndarray:
    if steps < 2:
        raise DispersiveDomainError("need at least two time samples")
    if not T > 0:
        raise DispersiveDomainError("horizon must be positive")
    return np.linspace(0.0, T, steps)


def evolve_coefficients(calc, coefs, times):
    phases = np.exp(-1j * np.outer(times, calc.eigenvalues))
    return phases * coefs[None, :]


def synthesize_rows(calc, modal) -> np.ndarray:
    """Grid values for each row of modal coefficients."""
    if isinstance(calc, SpectralData):
        return modal @ calc.vectors.T
    return np.stack([calc.synthesize(row) for row in modal])


class KrylovEvolver:
    """e^{-itH} on a sparse Hamiltonian through Krylov exponential actions.

    For boxes too large for a dense eigendecomposition.  Only Hamiltonians
    without negative spectrum are accepted, so that P_ac is the identity.
    """

    def __init__(self, g: GridModel, V: Optional[PotentialField] = None, tol_zero: float = 1e-9):
        self.grid = g
        self.weights = g.weights
        self.matrix = assemble_hamiltonian(g, V, sparse=True).tocsr()
        lowest = float(sla.eigsh(self.matrix, k=1, which="SA", return_eigenvectors=False)[0])
        if lowest < -tol_zero:
            raise HypothesisViolation(f"H has a bound state at {lowest:.6g}; use the modal calculus")
        self.lowest = lowest

    def project_ac(self, f) -> np.ndarray:
        return np.array(f.values if isinstance(f, GridFunction) else f, dtype=complex)

    def evolve(self, values, times) -> np.ndarray:
        return sla.expm_multiply(-1j * self.matrix, np.asarray(values, dtype=complex),
                                 start=times[0], stop=times[-1], num=times.size, endpoint=True)


def propagate(sd, psi: GridFunction, T: float, steps: int) -> EvolutionRecord:
    """u(t_m) = sum_k e^{-i t_m lambda_k} <psi, phi_k> phi_k on a uniform grid of ``steps`` times."""
    times = time_grid(T, steps)
    if isinstance(sd, KrylovEvolver):
        return EvolutionRecord(times, sd.evolve(psi.values, times), psi.weights, "e^{-itH}psi")
    modal = evolve_coefficients(sd, sd.coefficients(psi), times)
    slices = synthesize_rows(sd, modal)
    return EvolutionRecord(times, slices, psi.weights, "e^{-itH}psi")


def mixed_norm(rec: EvolutionRecord, p_time: float, e_space) -> float:
    """|| ||u(t)||_space ||_{L^p_time(0, T)} with trapezoidal time quadrature."""
    if len(rec) == 0:
        raise DispersiveDomainError("empty record")
    if isinstance(e_space, (int, float)):
        e_space = LorentzExponent.lebesgue(float(e_space))
    norms = np.array([lorentz_norm(rec.slice(m), e_space) for m in range(len(rec))])
    if p_time == math.inf:
        return float(norms.max())
    return float(np.trapezoid(norms**p_time, rec.times) ** (1.0 / p_time))


def duhamel_apply(sd, F: EvolutionRecord, T: Optional[float] = None, steps: Optional[int] = None) -> EvolutionRecord:
    """Gamma F(t_m) = int_0^{t_m} e^{-i(t_m - s)H} F(s) ds, composite trapezoid in s over the samples of F."""
    times = F.times
    if T is not None and steps is not None and not np.allclose(times, time_grid(T, steps)):
        raise DispersiveDomainError("forcing is not sampled on the requested time grid")
    coefs = np.stack([sd.coefficients(F.slices[m]) for m in range(len(F))])
    lam = sd.eigenvalues
    integrand = np.exp(1j * np.outer(times, lam)) * coefs
    dt = np.diff(times)[:, None]
    cum = np.concatenate([np.zeros((1, lam.size), dtype=complex), np.cumsum(0.5 * dt * (integrand[1:] + integrand[:-1]), axis=0)])
    modal = np.exp(-1j * np.outer(times, lam)) * cum
    return EvolutionRecord(times, synthesize_rows(sd, modal), F.weights, "Gamma F")


# ---------------------------------------------------------------- simple (piecewise constant) forcings


@dataclass
class SimpleForcing:
    """F(t) = values[j] for breaks[j] <= t < breaks[j+1], zero outside [breaks[0], breaks[-1])."""

    breaks: np.ndarray
    values: np.ndarray  # (pieces, grid size)
    weights: np.ndarray

    def __post_init__(self):
        self.breaks = np.asarray(self.breaks, dtype=float)
        self.values = np.asarray(self.values)
        if self.breaks.size != self.values.shape[0] + 1 or np.any(np.diff(self.breaks) <= 0):
            raise DispersiveDomainError("simple forcing needs increasing breaks, one more than pieces")
        if self.breaks[0] < 0:
            raise DispersiveDomainError("simple forcings are supported in t >= 0")

    def at(self, t) -> np.ndarray:
        t = np.atleast_1d(t)
        j = np.searchsorted(self.breaks, t, side="right") - 1
        out = np.zeros((t.size, self.values.shape[1]), dtype=self.values.dtype)
        ok = (j >= 0) & (j < self.values.shape[0])
        out[ok] = self.values[j[ok]]
        return out

    def map(self, fn) -> "SimpleForcing":
        return SimpleForcing(self.breaks, np.stack([fn(v) for v in self.values]), self.weights)

    def l2_time_norm(self, e_space) -> float:
        """(int ||F(t)||^2 dt)^{1/2} with the spatial quasi-norm ``e_space``; exact for simple F."""
        if isinstance(e_space, (int, float)):
            e_space = LorentzExponent.lebesgue(float(e_space))
        norms = np.array([lorentz_norm(GridFunction(v, self.weights), e_space) for v in self.values])
        return float(math.sqrt(np.sum(np.diff(self.breaks) * norms**2)))


def _phase_integral(lam, u1, u2):
    # int_{u1}^{u2} e^{-i lam u} du, elementwise, stable for lam * (u2 - u1) -> 0
    width = u2 - u1
    z = -1j * lam * width
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    phi = np.where(small, 1.0 + z / 2.0, np.expm1(safe) / safe)
    return np.exp(-1j * lam * u1) * width * phi


def duhamel_simple(calc, F: SimpleForcing, times) -> np.ndarray:
    """Modal coefficients of Gamma F(t) = int_0^t e^{-i(t-s)L} F(s) ds, exact for simple F."""
    lam = calc.eigenvalues
    coefs = np.stack([calc.coefficients(v) for v in F.values])  # (pieces, K)
    times = np.atleast_1d(times)
    out = np.zeros((times.size, lam.size), dtype=complex)
    for j in range(coefs.shape[0]):
        a, b = F.breaks[j], F.breaks[j + 1]
        hi = np.minimum(times, b)
        active = times > a
        # s in [a, min(t, b)]  <=>  u = t - s in [t - min(t, b), t - a]
        u1 = (times - hi)[:, None]
        u2 = (times - a)[:, None]
        contrib = _phase_integral(lam[None, :], u1, u2) * coefs[j][None, :]
        out[active] += contrib[active]
    return out


def duhamel_adjoint_simple(calc, G: SimpleForcing, times, T: float) -> np.ndarray:
    """Modal coefficients of Gamma* G(t) = int_t^T e^{i(s-t)L} G(s) ds for 0 <= t <= T."""
    lam = calc.eigenvalues
    coefs = np.stack([calc.coefficients(v) for v in G.values])
    times = np.atleast_1d(times)
    out = np.zeros((times.size, lam.size), dtype=complex)
    for j in range(coefs.shape[0]):
        a, b = G.breaks[j], min(G.breaks[j + 1], T)
        if b <= a:
            continue
        lo = np.maximum(times, a)
        active = times < b
        # int_{lo}^{b} e^{i lam (s - t)} ds = int_{lo-t}^{b-t} e^{i lam v} dv; reuse the kernel with -lam
        u1 = (lo - times)[:, None]
        u2 = (b - times)[:, None]
        contrib = _phase_integral(-lam[None, :], u1, u2) * coefs[j][None, :]
        out[active] += contrib[active]
    return out


def gauss_nodes(breaks, T: float, order: int = 16, max_phase: float = 2.0, lam_max: float = 1.0):
    """Composite Gauss-Legendre nodes/weights on [0, T] split at ``breaks``; sub-intervals keep lam_max*dt <= max_phase."""
    cuts = np.unique(np.concatenate(([0.0, T], np.clip(np.asarray(breaks, dtype=float), 0.0, T))))
    x, w = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        pieces = max(1, int(math.ceil(lam_max * (b - a) / max_phase)))
        edges = np.linspace(a, b, pieces + 1)
        for c, d in zip(edges[:-1], edges[1:]):
            nodes.append(0.5 * (d - c) * x + 0.5 * (d + c))
            weights.append(0.5 * (d - c) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _space_time_inner(X, Y, weights, qw):
    # <X, Y>_T = int sum_x w X conj(Y) dt at quadrature nodes
    return complex(np.sum(qw[:, None] * weights[None, :] * X * np.conj(Y)))


@dataclass
class DuhamelCheck:
    lhs: complex
    free_term: complex
    coupling_term: complex

    @property
    def rhs(self) -> complex:
        return self.free_term + self.coupling_term

    @property
    def relative_error(self) -> float:
        return abs(self.lhs - self.rhs) / max(abs(self.lhs), abs(self.free_term), 1e-300)


def duhamel_form_identity(
    sd: SpectralData, free: FreeDirichletCalculus, V: PotentialField, F: SimpleForcing, G: SimpleForcing, T: float, order: int = 16
) -> DuhamelCheck:
    """<Gamma_H P F, G>_T against <Gamma_0 P F, G>_T - i <V1 Gamma_H P F, V2 Gamma_0* G>_T (P = P_ac(H))."""
    PF = F.map(sd.project_ac)
    lam_max = max(np.max(np.abs(sd.eigenvalues)), np.max(free.eigenvalues))
    nodes, qw = gauss_nodes(np.concatenate((F.breaks, G.breaks)), T, order, lam_max=lam_max)
    gam_h = synthesize_rows(sd, duhamel_simple(sd, PF, nodes))
    gam_0 = synthesize_rows(free, duhamel_simple(free, PF, nodes))
    adj_0 = synthesize_rows(free, duhamel_adjoint_simple(free, G, nodes, T))
    Gt = G.at(nodes)
    w = sd.weights
    lhs = _space_time_inner(gam_h, Gt, w, qw)
    free_term = _space_time_inner(gam_0, Gt, w, qw)
    coupling = -1j * _space_time_inner(V.V1[None, :] * gam_h, V.V2[None, :] * adj_0, w, qw)
    return DuhamelCheck(lhs, free_term, coupling)


def propagator_form_identity(
    sd: SpectralData, free: FreeDirichletCalculus, V: PotentialField, psi: GridFunction, G: SimpleForcing, T: float, order: int = 16
) -> DuhamelCheck:
    """<e^{-itH} P psi, G>_T against <e^{it Delta} P psi, G>_T - i <V1 e^{-itH} P psi, V2 Gamma_0* G>_T."""
    Ppsi = sd.project_ac(psi)
    lam_max = max(np.max(np.abs(sd.eigenvalues)), np.max(free.eigenvalues))
    nodes, qw = gauss_nodes(G.breaks, T, order, lam_max=lam_max)
    uh = synthesize_rows(sd, evolve_coefficients(sd, sd.coefficients(Ppsi), nodes))
    u0 = synthesize_rows(free, evolve_coefficients(free, free.coefficients(Ppsi), nodes))
    adj_0 = synthesize_rows(free, duhamel_adjoint_simple(free, G, nodes, T))
    Gt = G.at(nodes)
    w = sd.weights
    lhs = _space_time_inner(uh, Gt, w, qw)
    free_term = _space_time_inner(u0, Gt, w, qw)
    coupling = -1j * _space_time_inner(V.V1[None, :] * uh, V.V2[None, :] * adj_0, w, qw)
    return DuhamelCheck(lhs, free_term, coupling)


def random_simple_forcing(g: GridModel, T: float, pieces: int, seed: int, width: float = 1.0) -> SimpleForcing:
    """Piecewise-constant forcing whose pieces are seeded Gaussian packets."""
    rng = np.random.default_rng(seed)
    inner = np.sort(rng.uniform(0.0, T, pieces - 1))
    breaks = np.concatenate(([0.0], inner, [T]))
    values = np.stack([gaussian_packet(g, rng.uniform(-g.L / 2, g.L / 2, g.n), rng.uniform(-1, 1, g.n), width)
                       * complex(rng.standard_normal(), rng.standard_normal()) for _ in range(pieces)])
    return SimpleForcing(breaks, values, g.weights)


# ---------------------------------------------------------------- data families


def gaussian_packet(g: GridModel, centre, momentum, width: float) -> np.ndarray:
    x = g.points - np.asarray(centre)[None, :]
    return np.exp(-np.sum(x * x, axis=1) / (2.0 * width**2) + 1j * x @ np.asarray(momentum))


def packet_family(g: GridModel, count: int = 20, seed: int = 0, max_momentum: float = 2.0, widths=(0.5, 1.5)):
    """Seeded unit-norm Gaussian packets: centres in the inner half-box, |k| <= max_momentum."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        centre = rng.uniform(-g.L / 2, g.L / 2, g.n)
        direction = rng.standard_normal(g.n)
        direction /= np.linalg.norm(direction)
        k = direction * max_momentum * rng.uniform() ** (1.0 / g.n)
        v = gaussian_packet(g, centre, k, rng.uniform(*widths))
        f = g.function(v)
        out.append(f.with_values(v / f.l2_norm()))
    return out


# ---------------------------------------------------------------- smoothing


def japanese_weight(g: GridModel, rho: float) -> np.ndarray:
    return (1.0 + g.radii**2) ** (-rho / 2.0)


def kato_smoothing_norm(free: FreeDirichletCalculus, sd: SpectralData, psi: GridFunction, rho: float, T: float, steps: int) -> float:
    """|| <x>^{-rho} |D|^{1/2} e^{-itH} P_ac psi ||_{L^2_t L^2_x} on [0, T] (trapezoid in t)."""
    if not rho > 0.5:
        raise DispersiveDomainError("weight exponent must exceed 1/2")
    g = free.grid
    ac = GridFunction(sd.project_ac(psi), psi.weights)
    rec = propagate(sd, ac, T, steps)
    weight = japanese_weight(g, rho)
    sq = np.array([np.sum(rec.weights * np.abs(weight * free.abs_d_half(s)) ** 2) for s in rec.slices])
    return float(math.sqrt(np.trapezoid(sq, rec.times)))


@dataclass
class KatoCheck:
    a: float  # sup of the weighted imaginary-part form
    argmax: tuple  # (lam, eps) attaining it
    measured: float  # sup over the trial family of ||A e^{-itH} v||_{L^2(0,T)} / ||v||
    bound: float  # 2 sqrt(a)

    @property
    def ratio(self) -> float:
        return self.measured / self.bound


def _smoothing_matrix(free: FreeDirichletCalculus, sd: SpectralData, rho: float):
    # B = A Phi, the smoothing operator A = <x>^{-rho} |D|^{1/2} P_ac written in the eigenbasis of H
    weight = japanese_weight(free.grid, rho)
    cols = sd.vectors.copy()
    cols[:, : sd.negative_count] = 0.0
    B = np.stack([weight * free.abs_d_half(cols[:, k]) for k in range(sd.size)], axis=1)
    return B * math.sqrt(sd.weights[0])


def kato_form_sup(free: FreeDirichletCalculus, sd: SpectralData, rho: float, lam_grid, eps_grid, seed: int = 0):
    """sup over (lam, eps) of ||A Im (H - lam - i eps)^{-1} A*|| on L^2_w."""
    B = _smoothing_matrix(free, sd, rho)
    best = (-1.0, None)
    v0 = np.random.default_rng(seed).standard_normal(B.shape[0]) + 0j
    for eps in eps_grid:
        for lam in lam_grid:
            d = eps / ((sd.eigenvalues - lam) ** 2 + eps**2)
            op = sla.LinearOperator(B.shape, matvec=lambda x: B @ (d * (B.conj().T @ x)), dtype=complex)
            val = float(sla.eigsh(op, k=1, which="LA", return_eigenvectors=False, v0=v0, tol=1e-8)[0].real)
            if val > best[0]:
                best = (val, (float(lam), float(eps)))
    return best


def kato_smoothing_check(free, sd, rho, data, T, steps, lam_grid=None, eps_grid=None) -> KatoCheck:
    """Empirical Kato constant a and the measured smoothing norms of a data family.

    The finite grid has pure point spectrum, so eps is bounded below by 1/T,
    the energy resolution of a time window of length T.
    """
    if lam_grid is None:
        lam_grid = np.linspace(0.0, float(sd.eigenvalues.max()), 61)
    if eps_grid is None:
        eps_grid = [1.0 / T, 2.0 / T, 4.0 / T]
    a, arg = kato_form_sup(free, sd, rho, lam_grid, eps_grid)
    measured = max(kato_smoothing_norm(free, sd, v, rho, T, steps) / v.l2_norm() for v in data)
    return KatoCheck(a, arg, measured, 2.0 * math.sqrt(a))


# ---------------------------------------------------------------- Strichartz


@dataclass
class StrichartzRow:
    label: str
    p: float
    q: float
    admissible: bool
    max_ratio: float
    argmax: int


@dataclass
class StrichartzReport:
    T: float
    rows: list
    hypothesis_ok: Optional[bool] = None
    exceptional: list = None


def strichartz_table(
    sd: SpectralData,
    pairs,
    data,
    T: float,
    steps: int = 129,
    forcings=None,
    s_values=(),
    hypothesis_ok: Optional[bool] = None,
    exceptional=None,
) -> StrichartzReport:
    """Ratios ||P_ac u||_{L^p_t L^q_x} / ||psi||_2 per admissible pair, plus the L^2_t inhomogeneous pairs.

    For every s in ``s_values`` the row reports
    ||Gamma_H P_ac F||_{L^2_t L^{q_s}_x} / ||F||_{L^2_t L^{p_s}_x} over ``forcings``.
    """
    rows = []
    records = [propagate(sd, GridFunction(sd.project_ac(v), v.weights), T, steps) for v in data]
    for pair in pairs:
        ratios = [mixed_norm(rec, pair.p, pair.q) / v.l2_norm() for rec, v in zip(records, data)]
        k = int(np.argmax(ratios))
        rows.append(StrichartzRow(f"hom({pair.p:g},{pair.q:g})", pair.p, pair.q, pair.admissible, float(ratios[k]), k))
    times = time_grid(T, steps)
    if s_values and isinstance(sd, KrylovEvolver):
        raise DispersiveDomainError("inhomogeneous rows need a modal calculus")
    for s in s_values:
        n = sd.grid.n
        q_s, p_s = nonadmissible_pair(s, n)
        ratios = []
        for F in forcings or []:
            PF = F.map(sd.project_ac)
            modal = duhamel_simple(sd, PF, times)
            rec = EvolutionRecord(times, synthesize_rows(sd, modal), F.weights, "Gamma_H P F")
            ratios.append(mixed_norm(rec, 2.0, q_s) / F.l2_time_norm(p_s))
        if ratios:
            k = int(np.argmax(ratios))
            rows.append(StrichartzRow(f"inhom(s={s:g})", 2.0, q_s, False, float(ratios[k]), k))
    return StrichartzReport(T, rows, hypothesis_ok, exceptional or [])


def dispersive_hypothesis(V: Optional[PotentialField], interval=(0.0, 4.0), steps: int = 9, tol: float = 0.05):
    """Pre-check that the scan finds no exceptional point on [0, infinity) inside ``interval``.

    Returns (ok, candidate energies).  V = None or V = 0 is trivially fine.
    """
    if V is None or V.is_zero:
        return True, []
    from .birman_schwinger import exceptional_scan

    report = exceptional_scan(V, interval, steps=steps, tol=tol)
    energies = [float(e) for e in report.energies]
    return not energies, energies
