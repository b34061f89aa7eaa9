"""Finite-element laboratory for the conformal Laplacian on 3-manifolds with boundary."""

__version__ = "0.1.0"
