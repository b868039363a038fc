"""Sparse linear policies over a semi-elliptical gait controller for a 3D biped."""

__version__ = "0.1.0"
