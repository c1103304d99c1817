"""Complex eigenvalues of H + W and Keller-type ratios.

W is a complex potential with the factorisation W = W1 W2,
W1 = |W|^{1/2}, W2 = |W|^{1/2} sgn W.  An energy E off the spectrum of H is
an eigenvalue of H + W exactly when -1 is an eigenvalue of W1 R(E) W2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse

from .birman_schwinger import (
    RCOND_FLOOR,
    REAL_AXIS_RCOND_FLOOR,
    ExceptionalPointError,
    boundary_value,
    exceptional_scan,
)
from .discretization import (
    GridModel,
    PotentialField,
    PotentialPreset,
    assemble_hamiltonian,
    free_resolvent_block,
    make_potential,
    sample_preset,
)
from .kernels import SpectralPoint


class KellerDomainError(ValueError):
    pass


class NumericError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ComplexPotential:
    values: np.ndarray
    grid: GridModel
    gamma: float = 0.5
    preset: Optional[PotentialPreset] = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise KellerDomainError("gamma must be positive")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))
        if self.values.shape != (self.grid.size,):
            raise KellerDomainError("one value per grid node is required")

    @property
    def exponent(self) -> float:
        return self.grid.n / 2.0 + self.gamma

    @property
    def norm(self) -> float:
        """||W||_{L^{n/2+gamma}} as a plain weighted Lebesgue norm."""
        p = self.exponent
        return float(np.sum(self.grid.weights * np.abs(self.values) ** p) ** (1.0 / p))

    @property
    def W1(self) -> np.ndarray:
        return np.sqrt(np.abs(self.values))

    @property
    def W2(self) -> np.ndarray:
        mod = np.abs(self.values)
        phase = np.divide(self.values, mod, out=np.zeros_like(self.values), where=mod > 0)
        return np.sqrt(mod) * phase

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.values != 0)

    def scaled(self, c) -> "ComplexPotential":
        return ComplexPotential(c * self.values, self.grid, self.gamma)

    def conjugate(self) -> "ComplexPotential":
        return ComplexPotential(np.conj(self.values), self.grid, self.gamma)

    def with_gamma(self, gamma: float) -> "ComplexPotential":
        return ComplexPotential(self.values, self.grid, gamma, self.preset)


def make_complex_potential(preset: PotentialPreset, g: GridModel, gamma: float = 0.5, mode: str = "cell") -> ComplexPotential:
    return ComplexPotential(sample_preset(preset, g, mode), g, gamma, preset)


def _hamiltonian_matrix(V: Optional[PotentialField], W: ComplexPotential, g: GridModel) -> np.ndarray:
    if W.grid.size != g.size or (V is not None and V.grid.size != g.size):
        raise KellerDomainError("V, W and the grid disagree")
    H = assemble_hamiltonian(g, V).matrix.astype(complex)
    H[np.diag_indices_from(H)] += W.values
    return H


def _sort_re_im(E: np.ndarray) -> np.ndarray:
    # (Re, Im) ordering on values rounded far below eigensolver accuracy, so that ties are stable
    key_re = np.round(E.real, 10)
    key_im = np.round(E.imag, 10)
    return np.lexsort((key_im, key_re))


def _parity_bases(N: int):
    """Orthonormal even and odd bases of R^N for the reflection j -> N-1-j (N odd)."""
    c = (N - 1) // 2
    even = np.zeros((N, c + 1))
    odd = np.zeros((N, c))
    even[c, 0] = 1.0
    r = 1.0 / math.sqrt(2.0)
    for m in range(1, c + 1):
        even[c + m, m] = even[c - m, m] = r
        odd[c + m, m - 1] = r
        odd[c - m, m - 1] = -r
    return even, odd


def reflection_symmetric(values: np.ndarray, g: GridModel, tol: float = 1e-12) -> bool:
    arr = np.asarray(values).reshape(g.shape)
    scale = max(float(np.max(np.abs(arr), initial=0.0)), 1.0)
    return all(np.max(np.abs(arr - np.flip(arr, axis=a)), initial=0.0) <= tol * scale for a in range(g.n))


def parity_sectors(g: GridModel):
    """Isometries Q onto the 2^n joint parity sectors of the coordinate reflections."""
    import itertools

    bases = _parity_bases(g.N)
    out = []
    for combo in itertools.product((0, 1), repeat=g.n):
        Q = bases[combo[0]]
        for c in combo[1:]:
            Q = np.kron(Q, bases[c])
        out.append((combo, Q))
    return out


@dataclass
class SectorSpectrum:
    """Eigenvalues of one invariant block Q^T (H + W) Q; Q = None means the whole matrix."""

    Q: Optional[np.ndarray]
    block: np.ndarray
    eigenvalues: np.ndarray

    def eigenvector(self, E: complex, iterations: int = 3, seed: int = 0) -> np.ndarray:
        """Unit right eigenvector for E by shifted inverse iteration on the block."""
        shift = complex(E) + 1e-10 * (1.0 + abs(E))
        lu = scipy.linalg.lu_factor(self.block - shift * np.eye(self.block.shape[0]))
        x = np.random.default_rng(seed).standard_normal(self.block.shape[0]) + 0j
        for _ in range(iterations):
            x = scipy.linalg.lu_solve(lu, x)
            x /= np.linalg.norm(x)
        return x if self.Q is None else self.Q @ x


def sector_spectra(V: Optional[PotentialField], W: ComplexPotential, g: GridModel, use_parity: bool = True) -> list:
    """Per-block eigenvalues of H_h + diag(W).

    When V and W are invariant under the coordinate reflections the matrix is
    split exactly into its parity sectors and each block is solved densely.
    """
    symmetric = use_parity and reflection_symmetric(W.values, g) and (V is None or reflection_symmetric(V.values, g))
    if not symmetric:
        H = _hamiltonian_matrix(V, W, g)
        return [SectorSpectrum(None, H, _dense_eig(H, False)[0])]
    Hs = assemble_hamiltonian(g, V, sparse=True).tocsr().astype(complex) + scipy.sparse.diags(W.values)
    out = []
    for _, Q in parity_sectors(g):
        block = Q.T @ (Hs @ Q)
        out.append(SectorSpectrum(Q, block, _dense_eig(block, False)[0]))
    return out


def complex_spectrum(V: Optional[PotentialField], W: ComplexPotential, g: GridModel, vectors: bool = False, use_parity: bool = True):
    """Eigenvalues of H_h + diag(W) ordered by (Re, Im); with ``vectors`` also unit right eigenvectors."""
    if W.grid.size != g.size or (V is not None and V.grid.size != g.size):
        raise KellerDomainError("V, W and the grid disagree")
    if not vectors:
        E = np.concatenate([s.eigenvalues for s in sector_spectra(V, W, g, use_parity)])
        return E[_sort_re_im(E)]
    symmetric = use_parity and reflection_symmetric(W.values, g) and (V is None or reflection_symmetric(V.values, g))
    if symmetric:
        Hs = assemble_hamiltonian(g, V, sparse=True).tocsr().astype(complex) + scipy.sparse.diags(W.values)
        E_parts, X_parts = [], []
        for _, Q in parity_sectors(g):
            e, x = _dense_eig(Q.T @ (Hs @ Q), True)
            E_parts.append(e)
            X_parts.append(Q @ x)
        E, X = np.concatenate(E_parts), np.concatenate(X_parts, axis=1)
    else:
        E, X = _dense_eig(_hamiltonian_matrix(V, W, g), True)
    order = _sort_re_im(E)
    X = X[:, order]
    return E[order], X / np.linalg.norm(X, axis=0)[None, :]


def _dense_eig(H, vectors):
    try:
        if vectors:
            return scipy.linalg.eig(H, check_finite=True)
        return scipy.linalg.eigvals(H, check_finite=True), None
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"non-Hermitian eigensolver failed: {exc}") from exc


# ---------------------------------------------------------------- Birman-Schwinger consistency


def _perturbed_block(V: Optional[PotentialField], E: complex, g: GridModel, rows: np.ndarray):
    """R(E) restricted to ``rows`` x ``rows`` for H = -Delta + V, E off [0, inf)."""
    E = complex(E)
    point = SpectralPoint(E)
    if V is None or V.is_zero:
        return free_resolvent_block(g, point, rows, rows)
    S = np.union1d(V.support, rows)
    R0 = free_resolvent_block(g, point, S, S)
    vS = V.values[S]
    system = np.eye(S.size) + R0 * vS[None, :]
    lu = scipy.linalg.lu_factor(system)
    rcond = scipy.linalg.lapack.zgecon(lu[0].astype(complex), np.linalg.norm(system, 1))[0]
    floor = REAL_AXIS_RCOND_FLOOR if E.imag == 0 else RCOND_FLOOR
    if rcond < floor:
        raise KellerDomainError(f"E = {E} lies (numerically) in the spectrum of H")
    RS = scipy.linalg.lu_solve(lu, R0)
    pos = np.searchsorted(S, rows)
    return RS[np.ix_(pos, pos)]


def birman_schwinger_matrix(V: Optional[PotentialField], W: ComplexPotential, E: complex, g: GridModel, eps0: float = 0.1, levels: int = 4):
    rows = W.support
    if rows.size == 0:
        return rows, np.zeros((0, 0), dtype=complex)
    E = complex(E)
    if E.imag == 0 and E.real >= 0:
        # real positive energies use the boundary value R(E + i0)
        if V is None:
            V = make_potential(PotentialPreset("zero"), g)
        try:
            R = boundary_value(V, E.real, eps0=eps0, levels=levels, g=g).operator.matrix
        except ExceptionalPointError as exc:
            raise KellerDomainError(f"E = {E.real} is exceptional for H") from exc
        block = R[np.ix_(rows, rows)]
    else:
        block = _perturbed_block(V, E, g, rows)
    return rows, W.W1[rows][:, None] * block * W.W2[rows][None, :]


def birman_schwinger_check(V: Optional[PotentialField], W: ComplexPotential, E: complex, g: GridModel, **kw) -> float:
    """min_j |mu_j + 1| over the spectrum of W1 R(E) W2; zero at eigenvalues of H + W."""
    rows, K = birman_schwinger_matrix(V, W, E, g, **kw)
    if rows.size == 0:
        return 1.0
    mu = scipy.linalg.eigvals(K)
    return float(np.min(np.abs(mu + 1.0)))


# ---------------------------------------------------------------- Keller ratios


def keller_ratio(E: complex, W: ComplexPotential) -> float:
    """gamma <= 1/2: |E|^gamma / ||W||^{n/2+gamma};  gamma > 1/2: |E|^{1/2} dist(E, [0, inf))^{gamma-1/2} / ||W||^{n/2+gamma}."""
    E = complex(E)
    gamma = W.gamma
    denom = W.norm ** W.exponent
    if denom == 0:
        raise KellerDomainError("W vanishes")
    if gamma <= 0.5:
        return abs(E) ** gamma / denom
    dist = abs(E.imag) if E.real >= 0 else abs(E)
    if dist == 0:
        return 0.0
    return abs(E) ** 0.5 * dist ** (gamma - 0.5) / denom


def localisation(vectors: np.ndarray, g: GridModel, radius: float) -> np.ndarray:
    """Fraction of |u|^2 carried by the ball |x| < radius, per column."""
    inside = g.radii < radius
    mass = np.abs(vectors) ** 2
    return mass[inside].sum(axis=0) / mass.sum(axis=0)


@dataclass
class Exclusion:
    energy: complex
    member: int
    reason: str  # "exceptional", "unresolved" or "box"
    detail: str = ""


@dataclass
class KellerRow:
    member: int
    energy: complex
    ratio: float
    localisation: float
    bs_distance: Optional[float] = None


@dataclass
class KellerReport:
    gamma: float
    delta: float
    rows: list
    excluded: list
    exceptional: list
    sector: Optional[tuple] = None
    notes: dict = field(default_factory=dict)

    @property
    def regime(self) -> str:
        return "gamma<=1/2" if self.gamma <= 0.5 else "gamma>1/2"

    @property
    def eigenvalues(self) -> list:
        return [r.energy for r in self.rows]

    @property
    def ratios(self) -> list:
        return [r.ratio for r in self.rows]

    @property
    def sup_ratio(self) -> float:
        return max(self.ratios, default=0.0)

    @property
    def max_bs_distance(self) -> Optional[float]:
        d = [r.bs_distance for r in self.rows if r.bs_distance is not None]
        return max(d) if d else None

    def exclusion_counts(self) -> dict:
        out = {}
        for x in self.excluded:
            out[x.reason] = out.get(x.reason, 0) + 1
        return out

    def im_trend(self):
        """(|E|, |Im E|) pairs sorted by |E| for the gamma > 1/2 diagnostics."""
        return sorted((abs(E), abs(E.imag)) for E in self.eigenvalues)


def sector_fit(E, margin: float = 0.0):
    """Vertex z0 = min Re E - margin - 1 and the smallest half-angle theta with |arg(E - z0)| <= theta."""
    E = np.asarray(list(E), dtype=complex)
    if E.size == 0:
        return None
    z0 = float(E.real.min()) - margin - 1.0
    theta = float(np.max(np.abs(np.angle(E - z0))))
    return z0, theta


def keller_scan(
    V: Optional[PotentialField],
    family,
    gamma: float,
    delta: float = 0.1,
    g: Optional[GridModel] = None,
    exceptional=None,
    exceptional_interval=None,
    loc_radius: Optional[float] = None,
    loc_threshold: float = 0.6,
    resolution: float = 1.0,
    bs_grid: Optional[GridModel] = None,
    check: bool = True,
) -> KellerReport:
    """Complex spectra of H + W over a family, with itemised exclusions.

    An eigenvalue is excluded when it lies within ``delta`` of an exceptional
    point of H, when |E| h^2 > ``resolution`` (the grid cannot carry the
    wavenumber sqrt(E)), or when its eigenvector keeps less than
    ``loc_threshold`` of its mass inside |x| < ``loc_radius`` (a mode of the
    Dirichlet box).  With ``check`` each kept eigenvalue gets its
    Birman-Schwinger distance, on ``bs_grid`` when given (V and W re-sampled
    from their presets).
    """
    if not family:
        raise KellerDomainError("empty family")
    g = g or family[0].grid
    if exceptional is None:
        exceptional = []
        if V is not None and not V.is_zero:
            interval = exceptional_interval or (-float(np.max(np.abs(V.values))) - 1.0, -1e-3)
            exceptional = list(exceptional_scan(V, interval, steps=41).energies)
    if loc_radius is None:
        loc_radius = 0.5 * g.L
    bs_V = V
    if bs_grid is not None and V is not None and V.preset is not None:
        bs_V = make_potential(V.preset, bs_grid, V.s, V.mode)
    e_max = resolution / g.h**2
    rows, excluded, all_E = [], [], []
    for m, W0 in enumerate(family):
        W = W0.with_gamma(gamma)
        sectors = sector_spectra(V, W, g)
        pairs = [(e, sec) for sec in sectors for e in sec.eigenvalues]
        pairs = [pairs[i] for i in _sort_re_im(np.array([e for e, _ in pairs]))]
        all_E.extend(e for e, _ in pairs)
        Wb = None
        checked = {}  # degenerate multiplets share one distance
        for e, sec in pairs:
            near = [c for c in exceptional if abs(e - c) < delta]
            if near:
                excluded.append(Exclusion(complex(e), m, "exceptional", f"within {delta:g} of {near[0]:.6g}"))
                continue
            if abs(e) > e_max:
                excluded.append(Exclusion(complex(e), m, "unresolved", f"|E| h^2 = {abs(e) * g.h**2:.3g}"))
                continue
            frac = float(localisation(sec.eigenvector(e)[:, None], g, loc_radius)[0])
            if frac < loc_threshold:
                excluded.append(Exclusion(complex(e), m, "box", f"{frac:.3f} of the mass in |x|<{loc_radius:g}"))
                continue
            row = KellerRow(m, complex(e), keller_ratio(e, W), frac)
            key = (round(e.real, 8), round(e.imag, 8))
            if check and key in checked:
                row.bs_distance = checked[key]
            elif check:
                if bs_grid is not None:
                    if Wb is None:
                        Wb = make_complex_potential(W0.preset, bs_grid, gamma) if W0.preset is not None else W
                    row.bs_distance = birman_schwinger_check(bs_V, Wb, e, bs_grid)
                else:
                    row.bs_distance = birman_schwinger_check(V, W, e, g)
                checked[key] = row.bs_distance
            rows.append(row)
    return KellerReport(gamma, delta, rows, excluded, [float(c) for c in exceptional], sector_fit(all_E))


def imaginary_well_family(g: GridModel, kappas, radius: float = 1.0, gamma: float = 0.5, mode: str = "cell"):
    from .discretization import imaginary_well

    return [make_complex_potential(imaginary_well(k, radius), g, gamma, mode) for k in kappas]
