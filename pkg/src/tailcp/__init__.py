"""Tail-adaptive change-point testing and estimation for high-dimensional linear regression."""

__version__ = "0.1.0"
