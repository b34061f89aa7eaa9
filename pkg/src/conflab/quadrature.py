"""Quadrature rules on the reference tetrahedron and triangle.

Points are returned as barycentric coordinates (rows sum to one) and the
weights sum to one, so an integral over a simplex ``T`` is
``|T| * sum(w * f(bary @ vertices))``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

_A = 0.5854101966249685
_B = 0.1381966011250105


@lru_cache(maxsize=None)
def tet_rule(degree: int = 2):
    """Exact for polynomials of total degree ``degree``."""
    if degree <= 1:
        return np.full((1, 4), 0.25), np.ones(1)
    if degree == 2:
        bary = np.full((4, 4), _B)
        np.fill_diagonal(bary, _A)
        return bary, np.full(4, 0.25)
    return _conical_tet(degree)


@lru_cache(maxsize=None)
def tri_rule(degree: int = 2):
    if degree <= 1:
        return np.full((1, 3), 1.0 / 3.0), np.ones(1)
    if degree == 2:
        bary = np.full((3, 3), 1.0 / 6.0)
        np.fill_diagonal(bary, 2.0 / 3.0)
        return bary, np.full(3, 1.0 / 3.0)
    return _conical_tri(degree)


def _gauss_jacobi01(q, alpha):
    # nodes/weights on [0, 1] for the weight (1 - t)^alpha
    x, w = roots_jacobi(q, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1)


def _conical_tet(degree):
    q = degree // 2 + 1
    a, wa = _gauss_jacobi01(q, 2.0)
    b, wb = _gauss_jacobi01(q, 1.0)
    c, wc = _gauss_jacobi01(q, 0.0)
    A, B, C = np.meshgrid(a, b, c, indexing="ij")
    W = (wa[:, None, None] * wb[None, :, None] * wc[None, None, :]).ravel()
    A, B, C = A.ravel(), B.ravel(), C.ravel()
    x = A
    y = B * (1 - A)
    z = C * (1 - A) * (1 - B)
    bary = np.stack([1 - x - y - z, x, y, z], axis=1)
    return bary, W / W.sum()


def _conical_tri(degree):
    q = degree // 2 + 1
    a, wa = _gauss_jacobi01(q, 1.0)
    b, wb = _gauss_jacobi01(q, 0.0)
    A, B = np.meshgrid(a, b, indexing="ij")
    W = (wa[:, None] * wb[None, :]).ravel()
    x = A.ravel()
    y = (B * (1 - A)).ravel()
    bary = np.stack([1 - x - y, x, y], axis=1)
    return bary, W / W.sum()
