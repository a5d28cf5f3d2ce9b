"""Deterministic space-to-ground BB84 QKD pass simulator."""

__version__ = "0.1.0"
