"""Colored branching processes, their rate functionals and random fractals."""

__version__ = "0.1.0"
