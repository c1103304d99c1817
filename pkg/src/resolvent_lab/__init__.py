"""Numerical laboratory for resolvents, Birman-Schwinger operators and dispersive norms of -Delta + V."""

__version__ = "0.1.0"

__all__ = [
    "lorentz",
    "kernels",
    "discretization",
    "birman_schwinger",
    "spectral",
    "dispersive",
    "eigenvalue_bounds",
    "cli",
]
