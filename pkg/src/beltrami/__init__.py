"""Antisymmetric operators, Beltrami classification and topologically constrained diffusion."""

__version__ = "0.1.0"
