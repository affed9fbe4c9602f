"""
Simplicial meshes (intervals and triangles) with red/green refinement.

The mesh keeps the full refinement tree.  Every element ever created has a
stable integer id; the active elements (leaves) form the computational mesh.
Red refinement splits an interval into 2 halves and a triangle into 4
similar children through its edge midpoints.  Green refinement bisects a
triangle towards a single hanging midpoint and is only ever used to restore
conformity; green children are never refined themselves.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

ROOT, RED, GREEN = "root", "red", "green"


class MeshError(ValueError):
    pass


class Mesh:
    """Refinable simplicial mesh in one or two space dimensions.

    Parameters
    ----------
    vertices : array_like, shape (nv, dim)
        Vertex coordinates.
    elements : array_like, shape (ne, dim + 1)
        Vertex indices of the root elements.  Triangles are reoriented to
        counter-clockwise order if necessary.
    """

    def __init__(self, vertices, elements):
        vertices = np.asarray(vertices, dtype=float)
        if vertices.ndim == 1:
            vertices = vertices[:, None]
        self.dim = vertices.shape[1]
        if self.dim not in (1, 2):
            raise MeshError("only 1D and 2D meshes are supported")
        self._coords = [tuple(v) for v in vertices]
        self.elements = []
        self.parent = []
        self.children = []
        self.kind = []
        self.active = []
        self._midpoints = {}
        for elem in np.asarray(elements, dtype=int):
            elem = tuple(int(v) for v in elem)
            if len(elem) != self.dim + 1:
                raise MeshError("element has the wrong number of vertices")
            if self._signed_measure(elem) < 0:
                elem = (elem[1], elem[0]) + elem[2:]
            self._add_element(elem, -1, ROOT)
        self._cache = {}

    # ------------------------------------------------------------------
    # basic queries

    @property
    def n_elements(self):
        """Number of elements in the tree (active or not)."""
        return len(self.elements)

    @property
    def n_vertices(self):
        return len(self._coords)

    @property
    def vertices(self):
        if "vertices" not in self._cache:
            self._cache["vertices"] = np.array(self._coords, dtype=float)
        return self._cache["vertices"]

    @property
    def leaves(self):
        """Sorted ids of the active elements."""
        if "leaves" not in self._cache:
            self._cache["leaves"] = np.flatnonzero(self.active)
        return self._cache["leaves"]

    @property
    def leaf_elements(self):
        """Vertex indices of the active elements, shape (nleaves, dim + 1)."""
        if "leaf_elements" not in self._cache:
            self._cache["leaf_elements"] = np.array(
                [self.elements[e] for e in self.leaves], dtype=int
            ).reshape(-1, self.dim + 1)
        return self._cache["leaf_elements"]

    def is_leaf(self, eid):
        return bool(self.active[eid])

    def copy(self):
        return copy.deepcopy(self)

    def _signed_measure(self, elem):
        x = np.array([self._coords[v] for v in elem])
        if self.dim == 1:
            return float(x[1, 0] - x[0, 0])
        d1, d2 = x[1] - x[0], x[2] - x[0]
        return 0.5 * float(d1[0] * d2[1] - d1[1] * d2[0])

    def measure(self, eid):
        return abs(self._signed_measure(self.elements[eid]))

    def diameter(self, eid):
        x = np.array([self._coords[v] for v in self.elements[eid]])
        if self.dim == 1:
            return float(abs(x[1, 0] - x[0, 0]))
        return float(max(np.linalg.norm(x[i] - x[j])
                         for i in range(3) for j in range(i + 1, 3)))

    def element_coords(self, eid):
        return np.array([self._coords[v] for v in self.elements[eid]])

    def root_of(self, eid):
        while self.parent[eid] >= 0:
            eid = self.parent[eid]
        return eid

    # ------------------------------------------------------------------
    # faces

    def _element_faces(self, elem):
        if self.dim == 1:
            return [(elem[0],), (elem[1],)]
        a, b, c = elem
        return [tuple(sorted((b, c))), tuple(sorted((a, c))), tuple(sorted((a, b)))]

    @property
    def faces(self):
        """Map from face key (sorted vertex tuple) to adjacent leaf ids."""
        if "faces" not in self._cache:
            faces = {}
            for eid in self.leaves:
                for f in self._element_faces(self.elements[eid]):
                    faces.setdefault(f, []).append(int(eid))
            self._cache["faces"] = faces
        return self._cache["faces"]

    def boundary_faces(self):
        return sorted(f for f, adj in self.faces.items() if len(adj) == 1)

    def is_boundary_face(self, face):
        return len(self.faces.get(tuple(sorted(face)), ())) == 1

    def neighbours(self, eid):
        """Face-neighbours of leaf ``eid`` in local face order."""
        out = []
        for f in self._element_faces(self.elements[eid]):
            for other in self.faces.get(f, ()):
                if other != eid:
                    out.append(other)
        return out

    def hanging_nodes(self):
        """Midpoint vertices that lie on an edge of some leaf triangle."""
        if self.dim == 1:
            return []
        out = set()
        for eid in self.leaves:
            for _, m in self._hanging_edges(eid):
                out.add(m)
        return sorted(out)

    def is_conforming(self):
        return not self.hanging_nodes()

    def total_measure(self):
        return float(sum(self.measure(e) for e in self.leaves))

    # ------------------------------------------------------------------
    # refinement

    def _add_element(self, elem, parent, kind):
        self.elements.append(tuple(elem))
        self.parent.append(parent)
        self.children.append([])
        self.kind.append(kind)
        self.active.append(True)
        return len(self.elements) - 1

    def _midpoint(self, a, b):
        key = (a, b) if a < b else (b, a)
        m = self._midpoints.get(key)
        if m is None:
            xa, xb = self._coords[a], self._coords[b]
            self._coords.append(tuple(0.5 * (p + q) for p, q in zip(xa, xb)))
            m = len(self._coords) - 1
            self._midpoints[key] = m
        return m

    def _hanging_edges(self, eid):
        elem = self.elements[eid]
        out = []
        for i in range(3):
            a, b = elem[(i + 1) % 3], elem[(i + 2) % 3]
            m = self._midpoints.get((a, b) if a < b else (b, a))
            if m is not None:
                out.append((i, m))
        return out

    def refine_red(self, eid):
        """Red-refine leaf ``eid`` and return the ids of its children.

        Triangle children are ordered (corner at vertex 0, corner at vertex 1,
        corner at vertex 2, central child).  Vertex ``i`` of the central child
        is the midpoint of the edge opposite vertex ``i`` of the parent.
        """
        if not self.active[eid]:
            raise MeshError(f"element {eid} is not a leaf")
        if self.kind[eid] == GREEN:
            raise MeshError("green closure must be removed first")
        elem = self.elements[eid]
        if self.dim == 1:
            a, b = elem
            m = self._midpoint(a, b)
            kids = [(a, m), (m, b)]
        else:
            a, b, c = elem
            mab, mbc, mca = self._midpoint(a, b), self._midpoint(b, c), self._midpoint(c, a)
            kids = [(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mbc, mca, mab)]
        self.active[eid] = False
        self.children[eid] = [self._add_element(k, eid, RED) for k in kids]
        self._cache.clear()
        return list(self.children[eid])

    def refine_green(self, eid, local_edge):
        """Bisect leaf triangle ``eid`` towards the midpoint of edge ``local_edge``.

        Edge ``i`` is the one opposite vertex ``i``.  Vertex positions are
        preserved in the children: the midpoint takes the slot of the edge
        endpoint it replaces.
        """
        if self.dim != 2:
            raise MeshError("green refinement needs triangles")
        if self.kind[eid] == GREEN:
            raise MeshError("green closure must be removed first")
        elem = list(self.elements[eid])
        i, j = (local_edge + 1) % 3, (local_edge + 2) % 3
        m = self._midpoint(elem[i], elem[j])
        k1, k2 = list(elem), list(elem)
        k1[j] = m
        k2[i] = m
        self.active[eid] = False
        self.children[eid] = [self._add_element(k, eid, GREEN) for k in (k1, k2)]
        self._cache.clear()
        return list(self.children[eid])

    def remove_green(self, parent):
        """Drop the green children of ``parent`` and reactivate it."""
        kids = self.children[parent]
        assert kids and all(self.kind[k] == GREEN and self.active[k] for k in kids)
        for k in kids:
            self.active[k] = False
        self.children[parent] = []
        self.active[parent] = True
        self._cache.clear()
        return kids

    def close_green(self, degrees=None):
        """Remove all hanging nodes by green (or, if needed, red) refinement.

        Triangles with one hanging midpoint are bisected (green), triangles
        with more are red-refined, and green children with a hanging node are
        un-greened by red-refining their parent.  ``degrees``, a list indexed
        by element id, is extended in place: new children inherit the degree
        of the element they replace (un-greened parents pass on the larger
        degree of their former green children).

        Returns the number of refinement operations performed.
        """
        if self.dim == 1:
            return 0
        ops = 0
        limit = 10 * (self.n_elements + 10) ** 2
        while True:
            changed = False
            for eid in list(self.leaves):
                if not self.active[eid]:
                    continue
                hanging = self._hanging_edges(eid)
                if not hanging:
                    continue
                changed = True
                ops += 1
                assert ops < limit, "green closure does not terminate"
                if self.kind[eid] == GREEN:
                    parent = self.parent[eid]
                    old = self.remove_green(parent)
                    kids = self.refine_red(parent)
                    if degrees is not None:
                        _inherit(degrees, kids, max(degrees[k] for k in old))
                elif len(hanging) == 1:
                    kids = self.refine_green(eid, hanging[0][0])
                    if degrees is not None:
                        _inherit(degrees, kids, degrees[eid])
                else:
                    kids = self.refine_red(eid)
                    if degrees is not None:
                        _inherit(degrees, kids, degrees[eid])
            if not changed:
                return ops

    # ------------------------------------------------------------------
    # point location

    def locate(self, x, eid=None, tol=1e-12):
        """Leaf id containing point ``x`` (searching the refinement tree)."""
        x = np.asarray(x, dtype=float)
        candidates = [e for e in range(self.n_elements) if self.parent[e] < 0] if eid is None else [eid]
        while candidates:
            e = candidates.pop(0)
            if not self._contains(e, x, tol):
                continue
            if self.active[e]:
                return e
            candidates = list(self.children[e])
        return None

    def _contains(self, eid, x, tol):
        lam = barycentric(self.element_coords(eid), x)
        return bool(np.all(lam >= -tol))

    def check(self):
        """Assert the structural invariants of the leaf mesh."""
        for f, adj in self.faces.items():
            assert len(adj) in (1, 2), f"face {f} has {len(adj)} elements"
        for e in self.leaves:
            assert self._signed_measure(self.elements[e]) > 0
        for e in range(self.n_elements):
            kids = self.children[e]
            if kids:
                assert not self.active[e]
                total = sum(self.measure(k) for k in kids)
                assert abs(total - self.measure(e)) <= 1e-12 * self.measure(e)
        assert self.is_conforming()


def _inherit(degrees, kids, value):
    for k in kids:
        while len(degrees) <= k:
            degrees.append(0)
        degrees[k] = value


def barycentric(coords, x):
    """Barycentric coordinates of point(s) ``x`` in the simplex ``coords``."""
    coords = np.asarray(coords, dtype=float)
    x = np.asarray(x, dtype=float)
    if coords.shape[1] == 1:
        t = (x[..., 0] - coords[0, 0]) / (coords[1, 0] - coords[0, 0])
        return np.stack([1 - t, t], axis=-1)
    J = np.column_stack([coords[1] - coords[0], coords[2] - coords[0]])
    ref = np.linalg.solve(J, (x - coords[0]).T).T
    return np.stack([1 - ref[..., 0] - ref[..., 1], ref[..., 0], ref[..., 1]], axis=-1)


# ----------------------------------------------------------------------
# patches


@dataclass
class Patch:
    """Element ``center`` of a global mesh together with its face-neighbours.

    ``mesh`` is a standalone local mesh.  Its leaves are the local cells;
    ``sources[i]`` is the global leaf that contains local leaf ``i`` and
    ``kappa_cells`` lists the local leaves covering the center element (for
    a red-refined patch: corner children 0, 1, 2 then the central child).
    ``boundary`` maps each local boundary face to True when it lies on the
    global domain boundary.
    """

    mesh: Mesh
    center: int
    sources: np.ndarray
    kappa_cells: list
    boundary: dict = field(default_factory=dict)
    degrees: np.ndarray | None = None
    refined: bool = False


def build_patch(mesh, eid, degrees=None):
    """Patch made of leaf ``eid`` and its immediate face-neighbours."""
    if not mesh.is_leaf(eid):
        raise MeshError(f"element {eid} is not a leaf")
    elems = [eid] + mesh.neighbours(eid)
    gverts = sorted({v for e in elems for v in mesh.elements[e]})
    local = {g: i for i, g in enumerate(gverts)}
    coords = mesh.vertices[gverts]
    lelems = [[local[v] for v in mesh.elements[e]] for e in elems]
    pmesh = Mesh(coords, lelems)
    boundary = {}
    for f in pmesh.boundary_faces():
        gface = tuple(sorted(gverts[v] for v in f))
        boundary[f] = mesh.is_boundary_face(gface)
    degs = None if degrees is None else np.asarray(degrees)[elems]
    return Patch(pmesh, eid, np.array(elems), [0], boundary, degs, False)


def build_refined_patch(mesh, eid, degrees=None):
    """Patch of ``eid`` with the center red-refined and neighbours green-closed."""
    base = build_patch(mesh, eid, degrees)
    pmesh = base.mesh.copy()
    if pmesh.dim == 2:
        kids = pmesh.refine_red(0)
        pmesh.close_green()
    else:
        kids = pmesh.refine_red(0)
    leaves = list(pmesh.leaves)
    roots = np.array([pmesh.root_of(e) for e in leaves])
    sources = base.sources[roots]
    kappa_cells = [leaves.index(k) for k in kids]
    boundary = {}
    root_faces = base.boundary
    X = pmesh.vertices
    for f in pmesh.boundary_faces():
        mid = X[list(f)].mean(axis=0)
        flag = None
        for rf, on_dom in root_faces.items():
            if _on_face(X[list(rf)], mid):
                flag = on_dom
                break
        assert flag is not None
        boundary[f] = flag
    degs = None if base.degrees is None else base.degrees[roots]
    return Patch(pmesh, eid, sources, kappa_cells, boundary, degs, True)


def _on_face(fx, x, tol=1e-12):
    if fx.shape[0] == 1:
        return bool(np.allclose(fx[0], x, atol=tol))
    a, b = fx
    d = b - a
    t = float(np.dot(x - a, d) / np.dot(d, d))
    return -tol <= t <= 1 + tol and np.linalg.norm(a + t * d - x) <= tol * max(1.0, np.linalg.norm(d))


# ----------------------------------------------------------------------
# decisions


def apply_refinements(mesh, degrees, decisions):
    """Apply marked p- and hp-refinements, then restore conformity.

    Parameters
    ----------
    mesh : Mesh
    degrees : array_like
        Polynomial degree per element id (entries of inactive ids unused).
    decisions : dict
        Leaf id -> ``"p"`` or a tuple of child degrees.  A tuple is ordered
        like the children from :meth:`Mesh.refine_red`.

    Returns
    -------
    (Mesh, numpy.ndarray)
        The refined copy of the mesh and the extended degree array.
    """
    mesh = mesh.copy()
    degs = [int(d) for d in degrees]
    for eid in decisions:
        if not mesh.is_leaf(eid):
            raise MeshError(f"decision for non-leaf element {eid}")
    hp = {}
    for eid in sorted(decisions):
        dec = decisions[eid]
        if isinstance(dec, str):
            if dec != "p":
                raise MeshError(f"unknown decision {dec!r}")
            degs[eid] += 1
            continue
        dec = tuple(int(d) for d in dec)
        if len(dec) != (2 if mesh.dim == 1 else 4):
            raise MeshError("hp decision has the wrong number of child degrees")
        target = eid
        if mesh.kind[eid] == GREEN:
            # green children are never refined: the hp tuple goes to the parent
            target = mesh.parent[eid]
        if target in hp:
            dec = tuple(max(a, b) for a, b in zip(hp[target], dec))
        hp[target] = dec
    for target in sorted(hp):
        if not mesh.active[target]:
            mesh.remove_green(target)
        kids = mesh.refine_red(target)
        for k, d in zip(kids, hp[target]):
            _inherit(degs, [k], d)
    mesh.close_green(degs)
    while len(degs) < mesh.n_elements:
        degs.append(0)
    return mesh, np.array(degs, dtype=int)


# ----------------------------------------------------------------------
# simple generators


def interval_mesh(n, a=0.0, b=1.0):
    x = np.linspace(a, b, n + 1)
    return Mesh(x[:, None], np.column_stack([np.arange(n), np.arange(1, n + 1)]))


def square_mesh(n=2, x0=0.0, y0=0.0, size=1.0):
    """Structured triangulation of a square with diagonals along x = y."""
    t = np.linspace(0.0, size, n + 1)
    X, Y = np.meshgrid(x0 + t, y0 + t, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    elems = []
    for i in range(n):
        for j in range(n):
            v00, v10, v01, v11 = idx[i, j], idx[i + 1, j], idx[i, j + 1], idx[i + 1, j + 1]
            elems += [(v00, v10, v11), (v00, v11, v01)]
    return Mesh(verts, elems)


def lshape_mesh():
    """L-shaped domain (-1,1)^2 minus [0,1)x(-1,0] split into 12 triangles.

    Every unit square is cut along both diagonals, so the mesh is symmetric
    about the line x2 = -x1.
    """
    verts, elems = [], []
    for (x0, y0) in [(-1.0, 0.0), (-1.0, -1.0), (0.0, 0.0)]:
        corners = [(x0, y0), (x0 + 1, y0), (x0 + 1, y0 + 1), (x0, y0 + 1)]
        ids = []
        for c in corners:
            if c not in verts:
                verts.append(c)
            ids.append(verts.index(c))
        verts.append((x0 + 0.5, y0 + 0.5))
        mid = len(verts) - 1
        for k in range(4):
            elems.append((ids[k], ids[(k + 1) % 4], mid))
    return Mesh(np.array(verts), elems)


# ----------------------------------------------------------------------
# plain-text serialisation


def save_mesh(path, mesh, degrees=None):
    """Write the leaf mesh as ``dim nv ne`` then coordinates then elements + degree."""
    leaves = mesh.leaves
    degs = np.ones(mesh.n_elements, dtype=int) if degrees is None else np.asarray(degrees)
    X = mesh.vertices
    used = np.unique(mesh.leaf_elements)
    renum = {int(v): i for i, v in enumerate(used)}
    with open(path, "w") as fh:
        fh.write(f"{mesh.dim} {len(used)} {len(leaves)}\n")
        for v in used:
            fh.write(" ".join(repr(float(c)) for c in X[v]) + "\n")
        for e in leaves:
            fh.write(" ".join(str(renum[v]) for v in mesh.elements[e]) + f" {int(degs[e])}\n")


def load_mesh(path):
    """Read a mesh written by :func:`save_mesh`; returns ``(mesh, degrees)``."""
    tokens = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0]
            tokens.extend(line.split())
    dim, nv, ne = (int(t) for t in tokens[:3])
    pos = 3
    coords = np.array(tokens[pos:pos + nv * dim], dtype=float).reshape(nv, dim)
    pos += nv * dim
    rows = np.array(tokens[pos:pos + ne * (dim + 2)], dtype=int).reshape(ne, dim + 2)
    mesh = Mesh(coords, rows[:, :-1])
    return mesh, rows[:, -1].copy()
