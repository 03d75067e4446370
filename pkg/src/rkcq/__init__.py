"""Runge-Kutta convolution quadrature laboratory."""

__version__ = "0.1.0"
