"""Numerical laboratory for weighted Hardy and Rellich inequalities with
iterated-logarithm remainders."""

__version__ = "0.1.0"
