"""Numerical laboratory for first-order elliptic operators on a model cylinder."""

__version__ = "0.1.0"
