"""Desk-scale numerics for transport operators with Maxwell-type boundary conditions."""

__version__ = "0.1.0"
