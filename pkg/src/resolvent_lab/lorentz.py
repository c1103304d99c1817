"""Lorentz-space quasi-norms of grid functions.

Every grid point is treated as an atom carrying its quadrature weight, so the
decreasing rearrangement of a grid function is a step function and all
quasi-norms below are evaluated in closed form on that step function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class LorentzDomainError(ValueError):
    pass


@dataclass(frozen=True)
class GridFunction:
    """Values on a point cloud together with positive quadrature weights."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        weights = np.broadcast_to(np.asarray(self.weights, dtype=float), values.shape)
        if values.ndim != 1:
            raise LorentzDomainError("grid function values must be one-dimensional")
        if np.any(~(weights > 0)):
            raise LorentzDomainError("quadrature weights must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", np.ascontiguousarray(weights))

    def __len__(self) -> int:
        return self.values.shape[0]

    def with_values(self, values) -> "GridFunction":
        return GridFunction(np.asarray(values), self.weights)

    def inner(self, other: "GridFunction") -> complex:
        """Weighted inner product, linear in the first slot."""
        return complex(np.sum(self.weights * self.values * np.conj(other.values)))

    def l2_norm(self) -> float:
        return lebesgue_norm(self, 2.0)


@dataclass(frozen=True)
class LorentzExponent:
    """Exponent pair (p, q) of L^{p,q}; ``q = math.inf`` selects the weak space."""

    p: float
    q: float

    def __post_init__(self):
        if not (1.0 < self.p < math.inf):
            raise LorentzDomainError(f"primary exponent must satisfy 1 < p < inf, got {self.p}")
        if not (self.q >= 1.0):
            raise LorentzDomainError(f"secondary exponent must satisfy q >= 1, got {self.q}")

    @classmethod
    def lebesgue(cls, p: float) -> "LorentzExponent":
        return cls(p, p)

    @property
    def is_lebesgue(self) -> bool:
        return self.p == self.q


@dataclass(frozen=True)
class Rearrangement:
    """Step function f* = levels[k] on [breakpoints[k-1], breakpoints[k])."""

    breakpoints: np.ndarray
    levels: np.ndarray
    order: np.ndarray  # grid indices sorted by descending modulus

    @property
    def total_measure(self) -> float:
        return float(self.breakpoints[-1])

    def __call__(self, t):
        """Evaluate f*(t); zero beyond the total measure."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breakpoints, t, side="right")
        padded = np.append(self.levels, 0.0)
        return padded[np.minimum(idx, len(self.levels))]


def decreasing_rearrangement(f: GridFunction) -> Rearrangement:
    if len(f) == 0:
        raise LorentzDomainError("cannot rearrange an empty grid function")
    mod = np.abs(f.values)
    # stable sort keeps ties in index order, which makes the output deterministic
    order = np.argsort(-mod, kind="stable")
    return Rearrangement(np.cumsum(f.weights[order]), mod[order], order)


def _step_norm(levels, breakpoints, p, q):
    if q == math.inf:
        return float(np.max(breakpoints ** (1.0 / p) * levels))
    # scale by the top level so levels**q cannot underflow or overflow
    top = float(np.max(levels)) if len(levels) else 0.0
    if top == 0.0:
        return 0.0
    r = q / p
    lower = np.concatenate(([0.0], breakpoints[:-1]))
    pieces = (p / q) * (breakpoints**r - lower**r)
    return top * float(np.sum((levels / top) ** q * pieces) ** (1.0 / q))


def lorentz_norm(f: GridFunction, e: LorentzExponent) -> float:
    """Quasi-norm ||t^{1/p-1/q} f*(t)||_{L^q(dt)} of the step rearrangement.

    For ``q == p`` this reduces exactly to the weighted l^p norm; for
    ``q == inf`` it is max_k t_k^{1/p} f*_k, the supremum of the step function
    approached at the right end of each step.
    """
    if e.is_lebesgue:
        return lebesgue_norm(f, e.p)
    r = decreasing_rearrangement(f)
    return _step_norm(r.levels, r.breakpoints, e.p, e.q)


def lebesgue_norm(f: GridFunction, p: float) -> float:
    if len(f) == 0:
        raise LorentzDomainError("empty grid function")
    mod = np.abs(f.values)
    top = float(mod.max())
    if p == math.inf or top == 0.0:
        return top
    return top * float(np.sum(f.weights * (mod / top) ** p) ** (1.0 / p))


def lorentz_norm_gradient(values, weights, e: LorentzExponent):
    """Norm value and an ascent (sub)gradient with respect to the complex values.

    The sort order of |values| is frozen, which makes the quasi-norm a weighted
    l^q norm of the moduli; the returned array g satisfies
    d/deps N(f + eps*h) = Re sum(conj(g) * h) wherever the order is strict.
    """
    values = np.asarray(values)
    mod = np.abs(values)
    phase = np.where(mod > 0, values / np.where(mod > 0, mod, 1.0), 0.0)
    p, q = e.p, e.q
    if e.is_lebesgue:
        norm = float(np.sum(weights * mod**p) ** (1.0 / p))
        if norm == 0.0:
            return 0.0, np.zeros_like(values)
        g = weights * mod ** (p - 1) * norm ** (1 - p)
        return norm, g * phase
    order = np.argsort(-mod, kind="stable")
    bp = np.cumsum(weights[order])
    levels = mod[order]
    grad = np.zeros(len(values), dtype=float)
    if q == math.inf:
        scores = bp ** (1.0 / p) * levels
        k = int(np.argmax(scores))
        norm = float(scores[k])
        grad[order[k]] = bp[k] ** (1.0 / p)
        return norm, grad * phase
    r = q / p
    lower = np.concatenate(([0.0], bp[:-1]))
    pieces = (p / q) * (bp**r - lower**r)
    total = float(np.sum(levels**q * pieces))
    if total == 0.0:
        return 0.0, np.zeros_like(values)
    norm = total ** (1.0 / q)
    grad[order] = pieces * levels ** (q - 1) * norm ** (1 - q)
    return norm, grad * phase


def sobolev_constant(n: int) -> float:
    """Best constant S_n in ||f||_{L^{2n/(n-2),2}}^2 <= S_n ||grad f||_2^2."""
    if int(n) != n or n < 3:
        raise LorentzDomainError(f"sharp Sobolev constant needs an integer n >= 3, got {n}")
    return (
        n * (n - 2) / 4.0
        * 2.0 ** (2.0 / n)
        * math.pi ** (1.0 + 1.0 / n)
        * math.gamma((n + 1) / 2.0) ** (-2.0 / n)
    )


def radial_shell_function(profile, r_min: float, r_max: float, ratio: float, n: int = 3) -> GridFunction:
    """Sample a radial profile on geometric spherical shells.

    Shell k spans [r_min * ratio^(k-1), r_min * ratio^k] and carries its exact
    volume as weight; the value is the profile at the geometric mean radius.
    The inner ball [0, r_min] is one atom sampled at r_min / sqrt(ratio).
    Refinement means ``ratio -> 1``.
    """
    if not (ratio > 1.0 and 0 < r_min < r_max):
        raise LorentzDomainError("need ratio > 1 and 0 < r_min < r_max")
    count = int(math.ceil(math.log(r_max / r_min) / math.log(ratio)))
    edges = r_min * ratio ** np.arange(count + 1)
    unit_ball = math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)
    vols = unit_ball * np.diff(edges**n)
    centres = np.sqrt(edges[:-1] * edges[1:])
    values = np.concatenate(([profile(r_min / math.sqrt(ratio))], profile(centres)))
    weights = np.concatenate(([unit_ball * r_min**n], vols))
    return GridFunction(np.asarray(values, dtype=float), weights)
