"""
Conforming hp finite element spaces on interval and triangle meshes.

DoFs are numbered vertices first, then edge modes edge by edge, then the
interior modes of each cell.  A shared edge carries the modes up to the
smallest degree of its adjacent cells (minimum rule).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import basis
from .mesh import MeshError


class Space:
    """hp space on the leaves of ``mesh``.

    Parameters
    ----------
    mesh : Mesh
        A conforming mesh.
    degrees : array_like
        Polynomial degree per element id (length ``mesh.n_elements``) or per
        leaf (length ``len(mesh.leaves)``).
    """

    def __init__(self, mesh, degrees):
        self.mesh = mesh
        self.dim = d = mesh.dim
        leaves = mesh.leaves
        degrees = np.asarray(degrees, dtype=int)
        if degrees.shape[0] == mesh.n_elements:
            cell_deg = degrees[leaves]
        elif degrees.shape[0] == len(leaves):
            cell_deg = degrees.copy()
        else:
            raise ValueError("degree vector does not match the mesh")
        if np.any(cell_deg < 1):
            raise ValueError("polynomial degrees must be >= 1")
        if d == 2 and not mesh.is_conforming():
            raise MeshError("mesh has hanging nodes")
        self.cells = leaves
        self.cell_index = {int(e): i for i, e in enumerate(leaves)}
        self.degrees = cell_deg
        E = mesh.leaf_elements
        self.cell_vertices = np.sort(E, axis=1)
        X = mesh.vertices
        self.coords = X[self.cell_vertices]  # (nc, d+1, d)
        J = np.transpose(self.coords[:, 1:, :] - self.coords[:, :1, :], (0, 2, 1))
        self.detJ = np.linalg.det(J)
        self.Jinv = np.linalg.inv(J)
        self._number(X)
        self._cache = {}

    # ------------------------------------------------------------------

    def _number(self, X):
        d, nc = self.dim, len(self.cells)
        used = np.unique(self.cell_vertices)
        vdof = -np.ones(X.shape[0], dtype=int)
        vdof[used] = np.arange(used.size)
        self.vertex_dof = vdof
        kind = [np.zeros(used.size, int)]
        ent = [used.copy()]
        order = [np.ones(used.size, int)]
        n = used.size
        # faces: edges in 2D, vertices in 1D
        if d == 2:
            edges, cell_edges = {}, np.zeros((nc, 3), dtype=int)
            for c in range(nc):
                v = self.cell_vertices[c]
                for j, (a, b) in enumerate(basis.TRI_EDGES):
                    key = (int(v[a]), int(v[b]))
                    cell_edges[c, j] = edges.setdefault(key, len(edges))
            self.edges = np.array(list(edges.keys()), dtype=int).reshape(-1, 2)
            self.cell_edges = cell_edges
            adj = [[] for _ in range(len(edges))]
            for c in range(nc):
                for e in cell_edges[c]:
                    adj[e].append(c)
            self.edge_cells = adj
            self.edge_degree = np.array([min(self.degrees[a] for a in cs) for cs in adj], dtype=int)
            self.edge_start = np.zeros(len(edges), dtype=int)
            for e in range(len(edges)):
                self.edge_start[e] = n
                m = self.edge_degree[e] - 1
                kind.append(np.ones(m, int))
                ent.append(np.full(m, e))
                order.append(np.arange(2, m + 2))
                n += m
            self.boundary_faces = [e for e in range(len(edges)) if len(adj[e]) == 1]
        else:
            counts = np.bincount(self.cell_vertices.ravel(), minlength=X.shape[0])
            self.boundary_faces = [int(v) for v in used if counts[v] == 1]
        self.bubble_start = np.zeros(nc, dtype=int)
        for c in range(nc):
            p = self.degrees[c]
            m = p - 1 if d == 1 else (p - 1) * (p - 2) // 2
            self.bubble_start[c] = n
            kind.append(np.full(m, 2))
            ent.append(np.full(m, c))
            if d == 1:
                order.append(np.arange(2, p + 1))
            else:
                order.append(np.concatenate([np.full(t + 1, t + 3) for t in range(p - 2)]).astype(int)
                             if p >= 3 else np.zeros(0, int))
            n += m
        self.n_dofs = n
        self.dof_kind = np.concatenate(kind)
        self.dof_entity = np.concatenate(ent)
        self.dof_order = np.concatenate(order)
        # local-to-global maps, -1 for modes cut by the minimum rule
        self.l2g = []
        for c in range(nc):
            p = self.degrees[c]
            lay = basis.layout(p, d)
            row = np.empty(len(lay), dtype=int)
            nb = 0
            for i, (k, e, o) in enumerate(lay):
                if k == 0:
                    row[i] = vdof[self.cell_vertices[c, e]]
                elif k == 1:
                    edge = self.cell_edges[c, e]
                    row[i] = self.edge_start[edge] + o - 2 if o <= self.edge_degree[edge] else -1
                else:
                    row[i] = self.bubble_start[c] + nb
                    nb += 1
            self.l2g.append(row)
        bd = set()
        for f in self.boundary_faces:
            bd.update(int(i) for i in self.face_dofs(f))
        self.boundary_dofs = np.array(sorted(bd), dtype=int)

    # ------------------------------------------------------------------

    @property
    def n_cells(self):
        return len(self.cells)

    def face_vertices(self, face):
        return (face,) if self.dim == 1 else tuple(int(v) for v in self.edges[face])

    def face_dofs(self, face):
        if self.dim == 1:
            return np.array([self.vertex_dof[face]])
        a, b = self.edges[face]
        m = self.edge_degree[face] - 1
        return np.concatenate([[self.vertex_dof[a], self.vertex_dof[b]],
                               self.edge_start[face] + np.arange(m)]).astype(int)

    def find_face(self, vertices):
        """Face id from its (mesh) vertex ids."""
        if self.dim == 1:
            return int(vertices[0])
        key = tuple(sorted(int(v) for v in vertices))
        if "face_lookup" not in self._cache:
            self._cache["face_lookup"] = {tuple(e): i for i, e in enumerate(self.edges.tolist())}
        return self._cache["face_lookup"][key]

    def submask(self, cell_degrees):
        """DoFs of the subspace where cell ``c`` has degree ``cell_degrees[c]``.

        The hierarchical basis makes any lower-degree space a coordinate
        subspace of this one (minimum rule applied with the new degrees).
        """
        cd = np.asarray(cell_degrees, dtype=int)
        if np.any(cd > self.degrees):
            raise ValueError("sub-degrees exceed the space degrees")
        mask = self.dof_kind == 0
        bub = self.dof_kind == 2
        mask |= bub & (self.dof_order <= cd[self.dof_entity * bub])
        if self.dim == 2:
            edeg = np.array([min(cd[a] for a in cs) for cs in self.edge_cells], dtype=int)
            edg = self.dof_kind == 1
            mask |= edg & (self.dof_order <= edeg[self.dof_entity * edg])
        return mask

    def to_reference(self, c, x):
        """Reference coordinates of physical points ``x`` in cell ``c``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return (x - self.coords[c, 0]) @ self.Jinv[c].T

    def to_physical(self, c, xref):
        xref = np.atleast_2d(np.asarray(xref, dtype=float))
        J = np.linalg.inv(self.Jinv[c])
        return self.coords[c, 0] + xref @ J.T

    def eval_cell(self, coeffs, c, xref):
        """Values and physical gradients of ``coeffs`` at reference points of cell ``c``."""
        V, G = basis.tabulate(self.degrees[c], self.dim, xref)
        row = self.l2g[c]
        loc = np.where(row >= 0, np.asarray(coeffs)[np.maximum(row, 0)], 0.0)
        val = V @ loc
        grad = np.einsum("qbi,b->qi", G, loc) @ self.Jinv[c]
        return val, grad

    def eval_physical(self, coeffs, c, x):
        return self.eval_cell(coeffs, c, self.to_reference(c, x))

    def interpolate_vertices(self, fn):
        """Coefficient vector with vertex values of ``fn`` and zero higher modes."""
        u = np.zeros(self.n_dofs)
        X = self.mesh.vertices
        used = np.flatnonzero(self.vertex_dof >= 0)
        u[self.vertex_dof[used]] = fn(X[used])
        return u


class FEFunction:
    """Coefficient vector attached to a :class:`Space`."""

    def __init__(self, space, coefficients=None):
        self.space = space
        if coefficients is None:
            coefficients = np.zeros(space.n_dofs)
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (space.n_dofs,):
            raise ValueError("coefficient vector has the wrong length")
        self.coefficients = coefficients

    def evaluate(self, element, local_point):
        """Value and gradient at ``local_point`` of leaf ``element``.

        ``local_point`` is given in the reference element spanned by the
        element's vertices in mesh order.
        """
        sp = self.space
        if element not in sp.cell_index:
            raise MeshError(f"element {element} is not a leaf")
        c = sp.cell_index[element]
        xref = np.atleast_2d(np.asarray(local_point, dtype=float))
        X = sp.mesh.element_coords(element)
        lam = np.column_stack([1 - xref.sum(axis=1), xref])
        x = lam @ X
        val, grad = sp.eval_physical(self.coefficients, c, x)
        if np.ndim(local_point) == 1:
            return val[0], grad[0]
        return val, grad

    def __call__(self, element, local_point):
        return self.evaluate(element, local_point)[0]


@dataclass
class Constraints:
    """Prescribed values of a set of DoFs."""

    dofs: np.ndarray
    values: np.ndarray

    def apply(self, u):
        u = np.array(u, dtype=float)
        u[self.dofs] = self.values
        return u


@lru_cache(maxsize=None)
def _edge_projector(q):
    """Gauss points on [-1, 1] and the matrix mapping samples to edge-mode coefficients."""
    s, w = np.polynomial.legendre.leggauss(q + 6)
    modes = np.array([basis.integrated_legendre(n, s) for n in range(2, q + 1)])
    M = (modes * w) @ modes.T
    P = np.linalg.solve(M, modes * w)
    for a in (s, P):
        a.setflags(write=False)
    return s, P


def constrain_dirichlet(space, faces, datum, face_degrees=None):
    """Fix the DoFs on ``faces`` from boundary data.

    Vertex DoFs take the datum's vertex values.  On each edge the
    difference between the datum and its linear interpolant is
    L2-projected onto the edge modes 2..q (q the edge degree, or
    ``face_degrees[face]`` when given).

    ``datum`` is a callable mapping points ``(n, dim)`` to values, or a dict
    from face id to such a callable.
    """
    X = space.mesh.vertices
    vals = {}
    for f in faces:
        fn = datum[f] if isinstance(datum, dict) else datum
        fv = space.face_vertices(f)
        xv = X[list(fv)]
        dv = np.asarray(fn(xv), dtype=float).reshape(-1)
        for v, val in zip(fv, dv):
            vals[int(space.vertex_dof[v])] = float(val)
        if space.dim == 1:
            continue
        q = space.edge_degree[f] if face_degrees is None else int(face_degrees[f])
        if q < 2:
            continue
        s, P = _edge_projector(q)
        t = 0.5 * (s + 1)
        pts = xv[0] + t[:, None] * (xv[1] - xv[0])
        resid = np.asarray(fn(pts), dtype=float).reshape(-1) - (dv[0] * (1 - t) + dv[1] * t)
        coef = P @ resid
        start = space.edge_start[f]
        for k, cval in enumerate(coef):
            vals[int(start + k)] = float(cval)
    dofs = np.array(sorted(vals), dtype=int)
    return Constraints(dofs, np.array([vals[i] for i in dofs]))


# ----------------------------------------------------------------------
# DoF counting for the competitive hp candidates


def count_center_dofs_2d(p1, p2, p3, p4):
    """DoFs carried by a red-refined triangle with child degrees p1..p4 (p4 central)."""
    ps = (p1, p2, p3, p4)
    if any(int(p) != p or p < 1 for p in ps):
        raise ValueError("child degrees must be integers >= 1")
    corners = sum(min(p, p4) - 1 + 2 * (p - 1) for p in (p1, p2, p3))
    bubbles = sum((p - 1) * (p - 2) for p in ps) // 2
    return 6 + corners + bubbles


def p_target_dofs(p, dim):
    """DoFs on an element after raising its degree from ``p`` to ``p + 1``."""
    if p < 1:
        raise ValueError("degree must be >= 1")
    return p + 2 if dim == 1 else (p + 2) * (p + 3) // 2


def build_space(mesh, degrees):
    return Space(mesh, degrees)
