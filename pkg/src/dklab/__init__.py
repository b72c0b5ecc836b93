"""Numerical laboratory for conservative stochastic diffusion with
spatially correlated, divergence-form noise on no-flux boxes."""

__version__ = "0.1.0"
