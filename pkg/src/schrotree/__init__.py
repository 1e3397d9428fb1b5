"""Schrödinger evolutions on trees: simulation and verification toolkit."""

__version__ = "0.1.0"
