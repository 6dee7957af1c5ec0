"""Finite-length probabilistic shaping over the nonlinear fiber channel."""

__version__ = "0.1.0"
