"""Finite-volume estimators for hyperuniformity, Coulomb energy and transport to Lebesgue of planar point processes."""

__version__ = "0.1.0"
