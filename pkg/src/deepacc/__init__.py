"""Adaptive cruise control with deep-ensemble headway estimates and chance-constrained MPC."""

__version__ = "0.1.0"
