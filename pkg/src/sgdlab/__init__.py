"""Numerical laboratory for SGD as out-of-equilibrium variational inference."""

__version__ = "0.1.0"
