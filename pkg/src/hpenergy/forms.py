"""
Quadrature-based evaluation of the energy, its gradient (the residual of the
weak form) and its Hessian on an hp space.

Cells are processed in groups sharing a polynomial degree and a quadrature
order, so every operation is a handful of batched numpy products.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import basis
from .quadrature import reference_rule


def quadrature_order(p, bump=0, singular=False, extra=0):
    """Exactness degree used on a cell of degree ``p``."""
    return 2 * int(p) + 2 + int(bump) + (2 if singular else 0) + int(extra)


class CellGroup:
    """Quadrature data for cells that share a degree and a rule."""

    def __init__(self, space, cells, p, order):
        d = space.dim
        rule = reference_rule(d, order)
        V, G = basis.tabulate_rule(p, d, rule)
        self.cells = np.asarray(cells, dtype=int)
        self.p = p
        self.rule = rule
        self.V = V  # (nq, nb)
        Jinv = space.Jinv[self.cells]  # (nc, d, d)
        self.G = np.einsum("qbi,cij->cqbj", G, Jinv)  # physical gradients (nc, nq, nb, d)
        nc, nq, nb = self.G.shape[:3]
        # the same data laid out for batched matrix products
        self.Gq = np.ascontiguousarray(self.G.transpose(0, 1, 3, 2).reshape(nc, nq * d, nb))
        self.Gb = np.ascontiguousarray(self.G.transpose(0, 2, 1, 3).reshape(nc, nb, nq * d))
        self.W = np.abs(space.detJ[self.cells])[:, None] * rule.weights[None, :]
        x0 = space.coords[self.cells, 0]
        J = np.linalg.inv(Jinv)
        self.X = x0[:, None, :] + np.einsum("qj,cij->cqi", rule.points, J)
        l2g = np.array([space.l2g[c] for c in self.cells], dtype=int).reshape(len(self.cells), -1)
        self.present = l2g >= 0
        self.l2g = np.where(self.present, l2g, 0)
        self._f = None

    def load(self, problem):
        if self._f is None:
            self._f = np.asarray(problem.f(self.X), dtype=float)
        return self._f

    def local(self, u):
        return np.where(self.present, u[self.l2g], 0.0)

    def values(self, u):
        """Values (nc, nq) and gradients (nc, nq, d) of coefficient vector ``u``."""
        uc = self.local(u)
        nc, nq, _, d = self.G.shape
        return uc @ self.V.T, np.matmul(self.Gq, uc[:, :, None]).reshape(nc, nq, d)


class Assembler:
    """Energy, residual and Jacobian of ``problem`` on ``space``.

    Parameters
    ----------
    space : Space
    problem : ProblemDef
    extra : int
        Additional quadrature order on top of the problem's default.
    """

    def __init__(self, space, problem, extra=0):
        self.space = space
        self.problem = problem
        sing = problem.singular_point
        keys = {}
        for c in range(space.n_cells):
            touches = False
            if sing is not None:
                touches = bool(np.any(np.all(np.abs(space.coords[c] - np.asarray(sing)) < 1e-14, axis=1)))
            p = int(space.degrees[c])
            q = quadrature_order(p, problem.quad_bump, touches, extra)
            keys.setdefault((p, q), []).append(c)
        self.groups = [CellGroup(space, cells, p, q) for (p, q), cells in sorted(keys.items())]
        self.n = space.n_dofs
        self._memo = (None, None)

    def _values(self, u):
        """Per-group values and gradients, reused for repeated calls with the same array."""
        last, vals = self._memo
        if last is not None and last.shape == u.shape and np.array_equal(last, u):
            return vals
        vals = [g.values(u) for g in self.groups]
        self._memo = (np.array(u, dtype=float), vals)
        return vals

    # -- scalar quantities -------------------------------------------------

    def cell_energies(self, u):
        """Energy contribution of every cell, in the space's cell order."""
        prob = self.problem
        out = np.zeros(self.space.n_cells)
        for g, (val, grad) in zip(self.groups, self._values(u)):
            dens = prob.mu(grad) + prob.g(val) - g.load(prob) * val
            out[g.cells] = np.sum(dens * g.W, axis=1)
        return out

    def energy(self, u):
        return float(np.sum(self.cell_energies(u)))

    # -- derivatives -------------------------------------------------------

    def residual(self, u):
        """Vector r_i = a(u, phi_i) - l(phi_i) over all DoFs."""
        prob = self.problem
        r = np.zeros(self.n)
        for g, (val, grad) in zip(self.groups, self._values(u)):
            nc, nq, nb, d = g.G.shape
            flux = prob.dmu(grad) * g.W[..., None]
            src = (prob.dg(val) - g.load(prob)) * g.W
            loc = np.matmul(g.Gb, flux.reshape(nc, nq * d, 1))[:, :, 0] + src @ g.V
            r += np.bincount(g.l2g.ravel(), weights=(loc * g.present).ravel(), minlength=self.n)
        return r

    def local_matrices(self, u):
        """Per-group local Hessians, shape (nc, nb, nb)."""
        prob = self.problem
        out = []
        for g, (val, grad) in zip(self.groups, self._values(u)):
            nc, nq, nb, d = g.G.shape
            D2 = prob.d2mu(grad) * g.W[..., None, None]
            # B[c, q, i, b] = sum_j D2[c, q, i, j] G[c, q, b, j]
            Gq = g.Gq.reshape(nc, nq, d, nb)
            B = sum(D2[:, :, :, j, None] * Gq[:, :, None, j, :] for j in range(d))
            K = np.matmul(g.Gb, B.reshape(nc, nq * d, nb))
            m = np.asarray(prob.d2g(val), dtype=float) * g.W  # (nc, nq)
            if np.any(m):
                K += np.matmul(g.V.T[None] * m[:, None, :], g.V[None])
            out.append(K * (g.present[:, :, None] & g.present[:, None, :]))
        return out

    def jacobian(self, u, dense=False):
        rows, cols, vals = [], [], []
        for g, K in zip(self.groups, self.local_matrices(u)):
            nb = K.shape[1]
            rows.append(np.repeat(g.l2g, nb, axis=1).ravel())
            cols.append(np.tile(g.l2g, (1, nb)).ravel())
            vals.append(K.ravel())
        rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        if dense:
            return np.bincount(rows * self.n + cols, weights=vals,
                               minlength=self.n * self.n).reshape(self.n, self.n)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def mass(self, dense=False):
        """Mass matrix of the space (independent of the problem)."""
        rows, cols, vals = [], [], []
        for g in self.groups:
            nb = g.V.shape[1]
            K = np.matmul(g.V.T[None] * g.W[:, None, :], g.V[None])
            K = K * (g.present[:, :, None] & g.present[:, None, :])
            rows.append(np.repeat(g.l2g, nb, axis=1).ravel())
            cols.append(np.tile(g.l2g, (1, nb)).ravel())
            vals.append(K.ravel())
        rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        if dense:
            return np.bincount(rows * self.n + cols, weights=vals,
                               minlength=self.n * self.n).reshape(self.n, self.n)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def project_rhs(self, fn_values):
        """Load vector b_i = int w phi_i for ``w`` given per group as (nc, nq) values.

        ``fn_values`` is a callable ``(group) -> values at group.X``.
        """
        b = np.zeros(self.n)
        for g in self.groups:
            loc = (fn_values(g) * g.W) @ g.V
            b += np.bincount(g.l2g.ravel(), weights=(loc * g.present).ravel(), minlength=self.n)
        return b


def assembler(space, problem, extra=0):
    """Cached :class:`Assembler` for ``space``."""
    key = ("assembler", id(problem), extra)
    cache = space._cache
    if key not in cache:
        cache[key] = Assembler(space, problem, extra)
    return cache[key]


def _coeffs(u):
    return u.coefficients if hasattr(u, "coefficients") else np.asarray(u, dtype=float)


def energy(space, problem, u):
    """E(u) = sum over cells of int mu(grad u) + g(u) - f u."""
    return assembler(space, problem).energy(_coeffs(u))


def element_energies(space, problem, u):
    return assembler(space, problem).cell_energies(_coeffs(u))


def element_energy(space, problem, u, element):
    """Energy restricted to leaf ``element`` (a mesh element id)."""
    return float(element_energies(space, problem, u)[space.cell_index[int(element)]])


def residual(space, problem, u, constraints=None):
    """Weak-form residual; rows of constrained DoFs are zero."""
    r = assembler(space, problem).residual(_coeffs(u))
    if constraints is not None:
        r[constraints.dofs] = 0.0
    return r


def jacobian(space, problem, u, constraints=None, dense=False):
    """Hessian of the energy; constrained rows and columns replaced by identity."""
    J = assembler(space, problem).jacobian(_coeffs(u), dense=dense)
    if constraints is None or len(constraints.dofs) == 0:
        return J
    keep = np.ones(space.n_dofs)
    keep[constraints.dofs] = 0.0
    if dense:
        J = J * keep[:, None] * keep[None, :]
        J[constraints.dofs, constraints.dofs] = 1.0
        return J
    D = sp.diags(keep)
    return (D @ J @ D + sp.diags(1.0 - keep)).tocsr()


def integrate(space, fn, order_extra=4):
    """int fn(x) dx over the leaf mesh with the default rule of each cell."""
    total = 0.0
    for c in range(space.n_cells):
        rule = reference_rule(space.dim, quadrature_order(space.degrees[c], extra=order_extra))
        x = space.to_physical(c, rule.points)
        total += abs(space.detJ[c]) * float(np.dot(rule.weights, fn(x)))
    return total
