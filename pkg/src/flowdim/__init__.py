"""Numerical constructions for free flows: tube covers, Rokhlin witnesses, crossed products."""

__version__ = "0.1.0"
