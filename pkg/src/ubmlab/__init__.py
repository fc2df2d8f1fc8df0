"""Unitary Brownian motion laboratory."""

__version__ = "0.1.0"
