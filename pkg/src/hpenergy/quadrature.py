"""Gauss rules on the reference interval [0, 1] and triangle (0,0), (1,0), (0,1)."""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray  # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,)
    degree: int  # polynomials up to this total degree are integrated exactly


@lru_cache(maxsize=None)
def gauss_interval(degree):
    n = max(1, degree // 2 + 1)
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(0.5 * (x + 1)[:, None], 0.5 * w, 2 * n - 1)


@lru_cache(maxsize=None)
def gauss_triangle(degree):
    """Collapsed (Duffy) Gauss rule with n^2 points, n = degree // 2 + 1."""
    n = max(1, degree // 2 + 1)
    a, wa = np.polynomial.legendre.leggauss(n)
    b, wb = roots_jacobi(n, 1.0, 0.0)
    a, wa = 0.5 * (a + 1), 0.5 * wa
    b, wb = 0.5 * (b + 1), 0.25 * wb
    A, B = np.meshgrid(a, b, indexing="ij")
    WA, WB = np.meshgrid(wa, wb, indexing="ij")
    pts = np.column_stack([(A * (1 - B)).ravel(), B.ravel()])
    return QuadratureRule(pts, (WA * WB).ravel(), 2 * n - 1)


def reference_rule(dim, degree):
    return gauss_interval(degree) if dim == 1 else gauss_triangle(degree)
