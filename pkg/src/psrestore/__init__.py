"""Restoration sequencing under DC power-flow and frequency-dynamics constraints."""

__version__ = "0.1.0"
