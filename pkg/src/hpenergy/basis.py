"""
Hierarchical shape functions on the reference interval and triangle.

Interval [0, 1], barycentrics l0 = 1 - x, l1 = x:
    [l0, l1, phi_2, ..., phi_p]
Triangle (0,0), (1,0), (0,1), barycentrics l0 = 1 - x - y, l1 = x, l2 = y:
    [l0, l1, l2,
     edge 0 modes 2..p, edge 1 modes 2..p, edge 2 modes 2..p,
     bubbles ordered by total degree]
Edge ``j`` joins the two vertices other than ``j`` (i < k) and carries the
integrated Legendre modes

    l_i l_k c_n P'_{n-1}(l_k - l_i),   c_n = -4 / (n (n - 1)),

whose trace is (P_n(s) - P_{n-2}(s)) / (2n - 1) with s running from
vertex i to vertex k.  Bubbles are l0 l1 l2 P_a(l1 - l0) P_b(2 l2 - 1) with
a + b <= p - 3.  Because the numbering of a cell's vertices follows the
global vertex order, shared edge modes agree across neighbouring cells.
"""
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as L

TRI_EDGES = ((1, 2), (0, 2), (0, 1))
_DLAM = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def n_basis(p, dim):
    return p + 1 if dim == 1 else (p + 1) * (p + 2) // 2


@lru_cache(maxsize=None)
def layout(p, dim):
    """Per local function: (kind, entity, order) with kind 0 vertex, 1 edge, 2 bubble.

    For bubbles ``order`` is the total polynomial degree a + b + 3.
    """
    out = [(0, v, 1) for v in range(dim + 1)]
    if dim == 1:
        out += [(2, 0, n) for n in range(2, p + 1)]
        return tuple(out)
    for e in range(3):
        out += [(1, e, n) for n in range(2, p + 1)]
    for t in range(p - 2):
        out += [(2, a, t + 3) for a in range(t + 1)]
    return tuple(out)


@lru_cache(maxsize=None)
def _leg_coeffs(n, deriv):
    c = np.zeros(n + 1)
    c[n] = 1.0
    return L.legder(c, deriv) if deriv else c


def legendre(n, t, deriv=0):
    if n - deriv < 0:
        return np.zeros_like(t)
    return L.legval(t, _leg_coeffs(n, deriv))


def edge_kernel(n, s):
    """Value and derivative of c_n P'_{n-1}(s)."""
    c = -4.0 / (n * (n - 1))
    return c * legendre(n - 1, s, 1), c * legendre(n - 1, s, 2)


def integrated_legendre(n, s):
    """Trace (P_n(s) - P_{n-2}(s)) / (2n - 1) of edge mode ``n`` on [-1, 1]."""
    return (legendre(n, s) - legendre(n - 2, s)) / (2 * n - 1)


def tabulate(p, dim, points):
    """Values (nq, nb) and reference gradients (nq, nb, dim) at ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if dim == 1:
        return _tabulate_interval(p, points[:, 0])
    return _tabulate_triangle(p, points[:, 0], points[:, 1])


@lru_cache(maxsize=256)
def tabulate_rule(p, dim, rule):
    V, G = tabulate(p, dim, rule.points)
    V.setflags(write=False)
    G.setflags(write=False)
    return V, G


def legendre_table(n, t):
    """P_k, P_k' and P_k'' for k = 0..n at points ``t`` via the three-term recurrence."""
    t = np.asarray(t, dtype=float)
    P = np.zeros((n + 1,) + t.shape)
    dP = np.zeros_like(P)
    d2P = np.zeros_like(P)
    P[0] = 1.0
    if n >= 1:
        P[1] = t
        dP[1] = 1.0
    for k in range(1, n):
        P[k + 1] = ((2 * k + 1) * t * P[k] - k * P[k - 1]) / (k + 1)
        dP[k + 1] = dP[k - 1] + (2 * k + 1) * P[k]
        d2P[k + 1] = d2P[k - 1] + (2 * k + 1) * dP[k]
    return P, dP, d2P


def _tabulate_interval(p, x):
    l0, l1 = 1 - x, x
    vals = [l0, l1]
    grads = [-np.ones_like(x), np.ones_like(x)]
    s = l1 - l0
    _, dP, d2P = legendre_table(max(p - 1, 0), s)
    for n in range(2, p + 1):
        c = -4.0 / (n * (n - 1))
        k, dk = c * dP[n - 1], c * d2P[n - 1]
        vals.append(l0 * l1 * k)
        grads.append((l0 - l1) * k + l0 * l1 * dk * 2.0)
    return np.stack(vals, axis=1), np.stack(grads, axis=1)[:, :, None]


def _tabulate_triangle(p, x, y):
    nq = x.size
    lam = np.stack([1 - x - y, x, y])
    V = np.empty((nq, n_basis(p, 2)))
    G = np.empty((nq, n_basis(p, 2), 2))
    V[:, :3] = lam.T
    G[:, :3] = _DLAM[None]
    col = 3
    for i, k in TRI_EDGES:
        li, lk = lam[i], lam[k]
        s = lk - li
        ds = _DLAM[k] - _DLAM[i]
        prod = li * lk
        dprod = lk[:, None] * _DLAM[i] + li[:, None] * _DLAM[k]
        _, dP, d2P = legendre_table(max(p - 1, 0), s)
        for n in range(2, p + 1):
            c = -4.0 / (n * (n - 1))
            ker, dker = c * dP[n - 1], c * d2P[n - 1]
            V[:, col] = prod * ker
            G[:, col] = dprod * ker[:, None] + (prod * dker)[:, None] * ds
            col += 1
    if p >= 3:
        b = lam[0] * lam[1] * lam[2]
        db = (lam[1] * lam[2])[:, None] * _DLAM[0] + (lam[0] * lam[2])[:, None] * _DLAM[1] \
            + (lam[0] * lam[1])[:, None] * _DLAM[2]
        s, ds = lam[1] - lam[0], _DLAM[1] - _DLAM[0]
        t, dt = 2 * lam[2] - 1, 2 * _DLAM[2]
        Ps, dPs, _ = legendre_table(p - 3, s)
        Pt, dPt, _ = legendre_table(p - 3, t)
        for tot in range(p - 2):
            for a in range(tot + 1):
                bb = tot - a
                ab = Ps[a] * Pt[bb]
                V[:, col] = b * ab
                G[:, col] = db * ab[:, None] + (b * dPs[a] * Pt[bb])[:, None] * ds \
                    + (b * Ps[a] * dPt[bb])[:, None] * dt
                col += 1
    return V, G
