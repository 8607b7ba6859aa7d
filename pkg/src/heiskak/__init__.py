"""Heisenberg vertical projection experiments."""

__version__ = "0.1.0"
