"""Numerical fourth-order obstruction flow of metrics on the periodic 4-torus."""

__version__ = "0.1.0"
