"""
Damped Newton minimisation of the discrete energy, globally and on patches.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import forms
from .fespace import Constraints, FEFunction, Space, constrain_dirichlet
from .mesh import barycentric

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Newton failed to reach the residual tolerance."""

    def __init__(self, message, residual=np.inf, iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass
class SolverConfig:
    newton_tol: float = 1e-10
    max_newton_iters: int = 30
    backtrack: float = 0.5
    armijo: float = 1e-4
    linear_solver: str = "direct"  # or "cg"
    cg_tol: float = 1e-12

    def __post_init__(self):
        if self.newton_tol <= 0 or self.cg_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be >= 1")
        if not 0 < self.backtrack < 1 or not 0 < self.armijo < 1:
            raise ValueError("line-search constants must lie in (0, 1)")
        if self.linear_solver not in ("direct", "cg"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class NewtonInfo:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    converged: bool = False


class _Factor:
    """Factorisation of a (restricted) Hessian, reusable across right-hand sides."""

    def __init__(self, H, config):
        self.config = config
        self.sparse = sp.issparse(H)
        if self.sparse:
            self.H = H.tocsc()
            self.lu = None if config.linear_solver == "cg" else spla.splu(self.H)
            return
        try:
            self.cho = sla.cho_factor(H, check_finite=False)
            self.lu = None
        except sla.LinAlgError:
            self.cho = None
            try:
                self.lu = sla.lu_factor(H, check_finite=False)
            except (sla.LinAlgError, ValueError) as exc:
                raise SolverError(f"singular Jacobian: {exc}") from exc

    def solve(self, r):
        if self.sparse:
            if self.lu is not None:
                return self.lu.solve(r)
            x, info = spla.cg(self.H, r, rtol=self.config.cg_tol, atol=0.0, maxiter=10 * self.H.shape[0])
            if info != 0:
                raise SolverError("conjugate gradients did not converge")
            return x
        if self.cho is not None:
            return sla.cho_solve(self.cho, r, check_finite=False)
        return sla.lu_solve(self.lu, r, check_finite=False)


def newton(energy, gradient, hessian, x0, free, config=None, hessian_fixed=False,
           initial_hessian=None):
    """Minimise ``energy`` over the coordinates ``free`` starting from ``x0``.

    Parameters
    ----------
    energy, gradient, hessian : callable
        Functions of the full coefficient vector.  ``hessian`` returns the
        matrix restricted to ``free`` (dense or sparse).
    free : ndarray of int
        Indices of the unknowns; all other entries of ``x0`` stay untouched.
    hessian_fixed : bool
        Reuse the first Hessian (quadratic energies).
    initial_hessian : matrix, optional
        Approximate Hessian used while it keeps contracting the residual by
        at least a factor 4 per step (chord iterations); afterwards the exact
        Hessian is used.

    Returns
    -------
    (ndarray, NewtonInfo)
    """
    config = config or SolverConfig()
    x = np.array(x0, dtype=float)
    info = NewtonInfo()
    E = energy(x)
    info.energies.append(E)
    factor = None
    chord = initial_hessian is not None
    if chord:
        factor = _Factor(initial_hessian, config)
    for it in range(config.max_newton_iters + 1):
        r = gradient(x)[free]
        rn = float(np.max(np.abs(r))) if r.size else 0.0
        info.residuals.append(rn)
        if not np.isfinite(rn):
            raise SolverError("non-finite residual", rn, it)
        if rn <= config.newton_tol:
            info.iterations, info.converged = it, True
            return x, info
        if it == config.max_newton_iters:
            break
        if chord and it > 0 and rn > 0.25 * info.residuals[-2]:
            chord, factor = False, None
        if factor is None or not (hessian_fixed or chord):
            factor = _Factor(hessian(x), config)
        d = -factor.solve(r)
        slope = float(np.dot(r, d))
        if not slope < 0:
            d, slope = -r, -float(np.dot(r, r))
        t = 1.0
        while True:
            xn = x.copy()
            xn[free] += t * d
            En = energy(xn)
            if abs(t * slope) < 1e-14 * (1 + abs(E)):
                break  # decrease below roundoff: trust the step
            if En <= E + config.armijo * t * slope:
                break
            t *= config.backtrack
            if t < 1e-12:
                break
        x, E = xn, En
        info.energies.append(E)
    info.iterations = config.max_newton_iters
    raise SolverError(f"Newton did not converge in {config.max_newton_iters} iterations "
                      f"(residual {info.residuals[-1]:.3e})", info.residuals[-1], info.iterations)


# ----------------------------------------------------------------------
# global problem


def dirichlet_constraints(space, problem):
    return constrain_dirichlet(space, space.boundary_faces, problem.dirichlet)


def harmonic_lift(space, problem, constraints):
    """Discrete harmonic extension of the boundary values (initial guess)."""
    asm = forms.assembler(space, problem)
    K = _laplace_matrix(asm)
    u = constraints.apply(np.zeros(space.n_dofs))
    free = np.setdiff1d(np.arange(space.n_dofs), constraints.dofs)
    if free.size:
        rhs = -(K @ u)[free]
        u[free] = spla.spsolve(K[free][:, free].tocsc(), rhs) if sp.issparse(K) else np.linalg.solve(K[np.ix_(free, free)], rhs)
    return u


def _laplace_matrix(asm):
    rows, cols, vals = [], [], []
    for g in asm.groups:
        nc, nq, nb, d = g.G.shape
        A = g.G.transpose(0, 2, 1, 3).reshape(nc, nb, nq * d)
        B = (g.G * g.W[:, :, None, None]).transpose(0, 1, 3, 2).reshape(nc, nq * d, nb)
        K = np.matmul(A, B) * (g.present[:, :, None] & g.present[:, None, :])
        rows.append(np.repeat(g.l2g, nb, axis=1).ravel())
        cols.append(np.tile(g.l2g, (1, nb)).ravel())
        vals.append(K.ravel())
    n = asm.n
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def solve_global(space, problem, config=None, initial=None, constraints=None, return_info=False):
    """Galerkin solution of the global problem by damped Newton.

    ``initial`` is an optional coefficient vector (e.g. a transferred
    previous solution); its boundary DoFs are overwritten by the Dirichlet
    constraints.  The default start is the harmonic lift of the data.
    """
    config = config or SolverConfig()
    asm = forms.assembler(space, problem)
    if constraints is None:
        constraints = dirichlet_constraints(space, problem)
    if initial is None:
        x0 = harmonic_lift(space, problem, constraints)
    else:
        x0 = constraints.apply(np.asarray(initial, dtype=float))
    free = np.setdiff1d(np.arange(space.n_dofs), constraints.dofs)

    def hess(x):
        return asm.jacobian(x)[free][:, free]

    x, info = newton(asm.energy, asm.residual, hess, x0, free, config, hessian_fixed=problem.linear)
    u = FEFunction(space, x)
    return (u, info) if return_info else u


def transfer(old_space, coefficients, new_space, problem):
    """L2 projection of a function on ``old_space`` onto ``new_space``.

    The new mesh must descend from the old one (same element ids), as
    produced by :func:`hpenergy.mesh.apply_refinements`.
    """
    old = old_space.mesh
    new = new_space.mesh
    asm = forms.assembler(new_space, problem)
    coefficients = np.asarray(coefficients, dtype=float)

    def old_values(g):
        out = np.empty(g.X.shape[:2])
        for k, c in enumerate(g.cells):
            e = int(new_space.cells[c])
            a = e
            while a >= old.n_elements or not (old.active[a] or old.children[a]):
                a = new.parent[a]
            if old.active[a]:
                out[k] = old_space.eval_physical(coefficients, old_space.cell_index[a], g.X[k])[0]
                continue
            for qi, x in enumerate(g.X[k]):
                leaf = old.locate(x, eid=a, tol=1e-10)
                out[k, qi] = old_space.eval_physical(coefficients, old_space.cell_index[leaf], x[None])[0][0]
        return out

    b = asm.project_rhs(old_values)
    M = asm.mass()
    return spla.spsolve(M.tocsc(), b)


# ----------------------------------------------------------------------
# patch problems


class PatchProblem:
    """Local problem on a patch with DoF-mask candidate subspaces.

    The space is a "super-space" on the patch mesh; each candidate is the
    coordinate subspace given by per-cell degrees (see
    :meth:`hpenergy.fespace.Space.submask`).  Patch-boundary faces inside
    the domain take the trace of the global solution; faces on the domain
    boundary take the problem's Dirichlet data.

    Parameters
    ----------
    patch : Patch
    degrees : array_like
        Super-space degree per local leaf.
    problem : ProblemDef
    global_space : Space
    u_hp : ndarray
        Coefficients of the global solution.
    """

    def __init__(self, patch, degrees, problem, global_space, u_hp):
        self.patch = patch
        self.problem = problem
        self.space = Space(patch.mesh, np.asarray(degrees, dtype=int))
        self.asm = forms.Assembler(self.space, problem)
        self.gspace = global_space
        self.u_hp = np.asarray(u_hp, dtype=float)
        sp_ = self.space
        self._face_cell = {}
        for f in sp_.boundary_faces:
            if sp_.dim == 1:
                cells = np.flatnonzero(np.any(sp_.cell_vertices == f, axis=1))
            else:
                cells = sp_.edge_cells[f]
            self._face_cell[f] = int(cells[0])
        # patch boundary faces keyed by their sorted local vertex tuple
        self._on_domain = {}
        for f in sp_.boundary_faces:
            key = tuple(sorted(sp_.face_vertices(f)))
            self._on_domain[f] = bool(patch.boundary[key])
        self._trace_cache = {}
        self._mass = None
        self._b_hp = None
        self._K = None
        self._H0 = None

    # -- traces --------------------------------------------------------

    def _datum(self, f):
        if self._on_domain[f]:
            return self.problem.dirichlet
        src = int(self.patch.sources[self._face_cell[f]])
        gcell = self.gspace.cell_index[src]
        return lambda x: self.gspace.eval_physical(self.u_hp, gcell, x)[0]

    def constraints(self, cell_degrees):
        """Boundary constraints of the candidate with the given cell degrees."""
        dofs, vals = [], []
        for f in self.space.boundary_faces:
            q = int(cell_degrees[self._face_cell[f]])
            key = (f, q)
            if key not in self._trace_cache:
                c = constrain_dirichlet(self.space, [f], self._datum(f), face_degrees={f: q})
                self._trace_cache[key] = c
            c = self._trace_cache[key]
            dofs.append(c.dofs)
            vals.append(c.values)
        dofs, vals = np.concatenate(dofs), np.concatenate(vals)
        dofs, idx = np.unique(dofs, return_index=True)
        return Constraints(dofs, vals[idx])

    # -- projections ---------------------------------------------------

    @property
    def mass(self):
        if self._mass is None:
            self._mass = self.asm.mass(dense=True)
        return self._mass

    def hp_values(self, points, cells):
        """Global solution evaluated at physical points of local cells."""
        out = np.empty(points.shape[:-1])
        for k, c in enumerate(cells):
            gcell = self.gspace.cell_index[int(self.patch.sources[c])]
            out[k] = self.gspace.eval_physical(self.u_hp, gcell, points[k].reshape(-1, points.shape[-1]))[0] \
                .reshape(points.shape[1:-1])
        return out

    @property
    def b_hp(self):
        if self._b_hp is None:
            self._b_hp = self.asm.project_rhs(lambda g: self.hp_values(g.X, g.cells))
        return self._b_hp

    def project(self, b, mask, constraints):
        """L2 projection with right-hand side ``b`` onto the masked subspace."""
        x = np.zeros(self.space.n_dofs)
        x[constraints.dofs] = constraints.values
        free = np.flatnonzero(mask)
        free = np.setdiff1d(free, constraints.dofs)
        if free.size:
            M = self.mass
            rhs = b[free] - M[np.ix_(free, constraints.dofs)] @ constraints.values
            x[free] = sla.solve(M[np.ix_(free, free)], rhs, assume_a="pos", check_finite=False)
        return x

    def free_dofs(self, mask, constraints):
        return np.setdiff1d(np.flatnonzero(mask), constraints.dofs)

    # -- solve ---------------------------------------------------------

    def solve(self, cell_degrees, config=None, start=None, chord_at=None):
        """Local minimiser in the candidate subspace; returns (coefficients, info).

        ``start`` is a super-space coefficient vector to project as the
        initial guess (default: the global solution).  ``chord_at`` is a
        super-space state whose Hessian seeds chord iterations (see
        :func:`newton`).
        """
        cell_degrees = np.asarray(cell_degrees, dtype=int)
        mask = self.space.submask(cell_degrees)
        cons = self.constraints(cell_degrees)
        b = self.b_hp if start is None else self.mass @ start
        x0 = self.project(b, mask, cons)
        free = self.free_dofs(mask, cons)
        asm = self.asm
        if self.problem.linear:
            if self._K is None:
                self._K = asm.jacobian(x0, dense=True)
            K = self._K

            def hess(x):
                return K[np.ix_(free, free)]
        else:
            def hess(x):
                return asm.jacobian(x, dense=True)[np.ix_(free, free)]
        H0 = None
        if chord_at is not None and not self.problem.linear:
            key = chord_at.tobytes()
            if self._H0 is None or self._H0[0] != key:
                self._H0 = (key, asm.jacobian(chord_at, dense=True))
            H0 = self._H0[1][np.ix_(free, free)]
        x, info = newton(asm.energy, asm.residual, hess, x0, free, config,
                         hessian_fixed=self.problem.linear, initial_hessian=H0)
        return x, info


def solve_patch(patch_problem, cell_degrees, config=None, start=None):
    """Solve ``patch_problem`` in the subspace with the given cell degrees."""
    x, _ = patch_problem.solve(cell_degrees, config, start)
    return FEFunction(patch_problem.space, x)


def locate_in_cells(space, cells, x, tol=1e-10):
    """First of ``cells`` whose closure contains point ``x``."""
    for c in cells:
        lam = barycentric(space.coords[c], x)
        if np.all(lam >= -tol):
            return int(c)
    raise ValueError("point not covered by the given cells")
