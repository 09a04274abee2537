"""Timeless configuration-space path integrals at desk scale."""

__version__ = "0.1.0"
