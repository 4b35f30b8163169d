"""Numerical laboratory for energy decay of biharmonic and approximately biharmonic maps on necks in R^4."""

__version__ = "0.1.0"
