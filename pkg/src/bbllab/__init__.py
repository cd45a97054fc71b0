"""Numerical laboratory for power-mean inequalities and their diffusion proofs."""

__version__ = "0.1.0"
