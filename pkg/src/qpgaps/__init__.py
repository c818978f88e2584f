"""Numerical toolkit for spectral gaps of 1D quasi-periodic Schrodinger operators."""

__version__ = "0.1.0"
