"""Numerical laboratory for a generalized fractional singular Burgers equation."""

__version__ = "0.1.0"
