"""
Local energy functionals with an averaged boundary-flux correction,
predicted energy reductions and error norms.

For an element K the modified local energy of v is

    E~_K(v) = E_K(v) - int_{dK} {mu'(grad w)} . n_K v ds,

where w is a reference function and {q} = (q+ + q-)/2 on interior faces and
q+ on the domain boundary.  If every element uses the same w, the flux terms
cancel in pairs and the sum over the mesh equals E(v) for v vanishing on the
boundary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import basis, forms
from .mesh import barycentric
from .quadrature import gauss_interval


def flux_average(q_plus, q_minus, normal):
    """Averaged normal flux; ``q_minus=None`` on the domain boundary.

    >>> flux_average(np.array([2.0, 0.0]), np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    1.0
    """
    q_plus = np.asarray(q_plus, dtype=float)
    avg = q_plus if q_minus is None else 0.5 * (q_plus + np.asarray(q_minus, dtype=float))
    return np.sum(avg * np.asarray(normal, dtype=float), axis=-1)


@dataclass
class FluxField:
    """Quadrature of the averaged normal flux on the boundary of one element.

    The boundary is cut into segments (halves of each edge in 2D, the two
    end points in 1D).  Arrays have shape (n_segments, n_points[, dim]).
    """

    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    values: np.ndarray

    def boundary_term(self, v):
        """int_{dK} flux v ds for values ``v`` at the segment points."""
        return float(np.sum(self.weights * self.values * v))


def boundary_segments(coords, order):
    """Quadrature points, weights and outward normals on the boundary of a simplex.

    Edges are split at their midpoints so that each half lies in one child
    of a red refinement.
    """
    coords = np.asarray(coords, dtype=float)
    d = coords.shape[1]
    if d == 1:
        a, b = coords[0, 0], coords[1, 0]
        sgn = 1.0 if b > a else -1.0
        pts = np.array([[[b]], [[a]]])
        return pts, np.ones((2, 1)), np.array([[[sgn]], [[-sgn]]])
    rule = gauss_interval(order)
    t, w = rule.points[:, 0], rule.weights
    centroid = coords.mean(axis=0)
    P, W, N = [], [], []
    for j in range(3):
        a, b = coords[(j + 1) % 3], coords[(j + 2) % 3]
        m = 0.5 * (a + b)
        tang = b - a
        n = np.array([tang[1], -tang[0]]) / np.linalg.norm(tang)
        if np.dot(n, m - centroid) < 0:
            n = -n
        for s0, s1 in ((a, m), (m, b)):
            P.append(s0 + t[:, None] * (s1 - s0))
            W.append(w * np.linalg.norm(s1 - s0))
            N.append(np.broadcast_to(n, (t.size, 2)))
    return np.array(P), np.array(W), np.array(N)


def _segment_cell(space, cells, seg_points, tol=1e-10):
    """Cell among ``cells`` that contains the whole segment (None if none)."""
    test = np.vstack([seg_points.mean(axis=0), seg_points])
    for c in cells:
        lam = barycentric(space.coords[c], test)
        if np.all(lam >= -tol):
            return int(c)
    return None


class PointEvaluator:
    """Tabulated basis of a space at fixed physical points.

    ``points[s]`` is evaluated in cell ``cells[s]``; segments that share a
    cell are tabulated together.
    """

    def __init__(self, space, cells, points):
        self.space = space
        points = np.asarray(points, dtype=float)
        self.shape = points.shape[:-1]
        d = points.shape[-1]
        cells = np.asarray(cells, dtype=int)
        self.items = []
        for c in np.unique(cells):
            segs = np.flatnonzero(cells == c)
            pts = points[segs].reshape(-1, d)
            V, G = basis.tabulate(int(space.degrees[c]), space.dim, space.to_reference(c, pts))
            G = np.einsum("qbi,ij->qbj", G, space.Jinv[c])
            row = space.l2g[c]
            self.items.append((segs, row >= 0, np.maximum(row, 0), V, G))

    def values(self, u):
        out = np.empty(self.shape)
        for segs, present, idx, V, _ in self.items:
            out[segs] = (V @ np.where(present, u[idx], 0.0)).reshape((len(segs),) + self.shape[1:])
        return out

    def gradients(self, u):
        out = np.empty(self.shape + (self.space.dim,))
        for segs, present, idx, _, G in self.items:
            g = np.einsum("qbj,b->qj", G, np.where(present, u[idx], 0.0))
            out[segs] = g.reshape((len(segs),) + self.shape[1:] + (self.space.dim,))
        return out


# ----------------------------------------------------------------------
# element-local functionals on a patch


class KappaFunctional:
    """Modified local energy of the center element of a patch problem.

    Parameters
    ----------
    pp : PatchProblem
        Patch problem whose super-space covers the element with
        ``pp.patch.kappa_cells``.
    segments : tuple
        ``(points, weights, normals)`` from :func:`boundary_segments`.
    """

    def __init__(self, pp, segments):
        self.pp = pp
        sp = pp.space
        pts, w, n = segments
        self.points, self.weights, self.normals = pts, w, n
        kc = list(pp.patch.kappa_cells)
        self.kappa_cells = kc
        others = [c for c in range(sp.n_cells) if c not in kc]
        self.inside = [_segment_cell(sp, kc, s) for s in pts]
        assert all(c is not None for c in self.inside), "boundary segment outside the element"
        self.outside = [_segment_cell(sp, others, s) for s in pts]
        self.eval_in = PointEvaluator(sp, self.inside, pts)
        out_idx = [s for s, c in enumerate(self.outside) if c is not None]
        self.out_idx = np.array(out_idx, dtype=int)
        self.eval_out = PointEvaluator(sp, [self.outside[s] for s in out_idx], pts[out_idx]) if out_idx else None
        self._hp = None

    def flux(self, w):
        """Averaged reference flux of super-space coefficients ``w``."""
        dmu = self.pp.problem.dmu
        q_in = dmu(self.eval_in.gradients(w))
        avg = q_in.copy()
        if self.eval_out is not None:
            q_out = dmu(self.eval_out.gradients(w))
            avg[self.out_idx] = 0.5 * (q_in[self.out_idx] + q_out)
        return FluxField(self.points, self.weights, self.normals, np.sum(avg * self.normals, axis=-1))

    def energy(self, x):
        """E_K of super-space coefficients ``x`` (sum over the element's cells)."""
        e = self.pp.asm.cell_energies(x)
        return float(np.sum(e[self.kappa_cells]))

    def modified(self, x, flux):
        return self.energy(x) - flux.boundary_term(self.eval_in.values(x))

    def modified_hp(self, flux):
        """Modified energy of the global solution with the same quadrature."""
        if self._hp is None:
            self._hp = (self._hp_energy(), self._hp_boundary_values())
        e, vals = self._hp
        return e - flux.boundary_term(vals)

    def _hp_energy(self):
        pp, prob = self.pp, self.pp.problem
        gs = pp.gspace
        total = 0.0
        kc = set(self.kappa_cells)
        for g in pp.asm.groups:
            for k, c in enumerate(g.cells):
                if int(c) not in kc:
                    continue
                gcell = gs.cell_index[int(pp.patch.sources[c])]
                val, grad = gs.eval_physical(pp.u_hp, gcell, g.X[k])
                dens = prob.mu(grad) + prob.g(val) - g.load(prob)[k] * val
                total += float(np.dot(dens, g.W[k]))
        return total

    def _hp_boundary_values(self):
        pp = self.pp
        gs = pp.gspace
        gcell = gs.cell_index[int(pp.patch.center)]
        flat = self.points.reshape(-1, self.points.shape[-1])
        return gs.eval_physical(pp.u_hp, gcell, flat)[0].reshape(self.points.shape[:-1])


def local_modified_energy(functional, x, flux):
    """E~_K(x) for super-space coefficients ``x`` of a patch problem."""
    return functional.modified(x, flux)


def predicted_reduction(functional, x, flux):
    """E~_K(u_hp) - E~_K(candidate)."""
    return functional.modified_hp(flux) - functional.modified(x, flux)


# ----------------------------------------------------------------------
# global flux field (used to check the telescoping identity)


def global_modified_energies(space, problem, v, w, extra=0):
    """E~_K(v) for every cell, with the averaged flux of the global function ``w``."""
    asm = forms.assembler(space, problem)
    energies = asm.cell_energies(v)
    mesh = space.mesh
    out = np.empty(space.n_cells)
    # one rule for every face, so both sides of an edge see the same points
    order = forms.quadrature_order(int(space.degrees.max()), problem.quad_bump, extra=extra)
    for c in range(space.n_cells):
        eid = int(space.cells[c])
        pts, wts, nrm = boundary_segments(space.coords[c], order)
        neigh = [space.cell_index[n] for n in mesh.neighbours(eid)]
        ev_in = PointEvaluator(space, [c] * len(pts), pts)
        q = problem.dmu(ev_in.gradients(w))
        for s in range(len(pts)):
            other = _segment_cell(space, neigh, pts[s])
            if other is not None:
                ev = PointEvaluator(space, [other], pts[s:s + 1])
                q[s] = 0.5 * (q[s] + problem.dmu(ev.gradients(w))[0])
        flux = np.sum(q * nrm, axis=-1)
        out[c] = energies[c] - float(np.sum(wts * flux * ev_in.values(v)))
    return out


# ----------------------------------------------------------------------
# error norms


def error_norms(space, problem, u, extra=4):
    """Errors of ``u`` against the exact solution of ``problem``.

    Returns a dict with ``energy`` (E(u_hp)), ``energy_gap``
    |E(u*) - E(u_hp)|, ``err_energy_norm``, ``err_Lp`` and ``err_W1p`` (the
    seminorm), all with exponent ``problem.norm_exponent``.  Only ``energy``
    is filled in when no exact solution is available.
    """
    x = u.coefficients if hasattr(u, "coefficients") else np.asarray(u, dtype=float)
    E = forms.energy(space, problem, x)
    out = {"energy": E, "energy_gap": np.nan, "err_energy_norm": np.nan,
           "err_Lp": np.nan, "err_W1p": np.nan}
    if not problem.has_exact:
        return out
    q = problem.norm_exponent
    asm = forms.assembler(space, problem, extra=extra)
    lp = w1p = 0.0
    for g in asm.groups:
        val, grad = g.values(x)
        eu = problem.exact(g.X) - val
        eg = problem.exact_grad(g.X) - grad
        lp += float(np.sum(np.abs(eu) ** q * g.W))
        w1p += float(np.sum(np.sum(eg * eg, axis=-1) ** (q / 2) * g.W))
    a, b = problem.energy_norm_weights
    out["err_Lp"] = lp ** (1 / q)
    out["err_W1p"] = w1p ** (1 / q)
    out["err_energy_norm"] = (a * w1p + b * lp) ** (1 / q)
    if problem.exact_energy is not None:
        out["energy_gap"] = abs(problem.exact_energy - E)
    return out

