"""
Competitive hp-refinement: for every element, compare the predicted energy
reduction of raising its degree against a family of h-refinements with the
same number of local degrees of freedom, mark the elements with the largest
predicted reductions and refine each one according to its winner.
"""
from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .estimator import KappaFunctional, boundary_segments, error_norms
from .fespace import Space, count_center_dofs_2d, p_target_dofs
from .forms import quadrature_order
from .mesh import apply_refinements, build_patch, build_refined_patch
from .solve import PatchProblem, SolverConfig, SolverError, solve_global, transfer

log = logging.getLogger(__name__)

P_REFINE = "p"


# ----------------------------------------------------------------------
# candidates


@lru_cache(maxsize=None)
def _enumerate(p, dim):
    if p < 1:
        raise ValueError("degree must be >= 1")
    if dim == 1:
        return tuple((a, p + 1 - a) for a in range(1, p + 1))
    target = p_target_dofs(p, 2)
    out = []
    for t in itertools.product(range(1, p + 3), repeat=4):
        if count_center_dofs_2d(*t) == target:
            out.append(t)
    return tuple(out)


def enumerate_candidates(p, dim):
    """hp degree tuples with the same local DoF count as p-enrichment.

    1D: pairs (p1, p2) with p1 + p2 = p + 1.  2D: child degrees (p1, p2, p3,
    p4), p4 for the central child, each in [1, p + 2], whose count from
    :func:`count_center_dofs_2d` equals ``p_target_dofs(p, 2)``.  Tuples are
    in lexicographic order.
    """
    return list(_enumerate(int(p), int(dim)))


def subsample(candidates, nmax, rng):
    """At most ``nmax`` of ``candidates``, drawn uniformly without replacement.

    The relative order of the kept tuples is preserved.  The P candidate is
    handled separately by the caller and always retained.
    """
    if nmax is None or len(candidates) <= nmax:
        return list(candidates)
    if nmax < 1:
        raise ValueError("nmax must be >= 1")
    keep = np.sort(rng.choice(len(candidates), size=nmax, replace=False))
    return [candidates[i] for i in keep]


def element_rng(seed, iteration, element):
    return np.random.default_rng([int(seed), int(iteration), int(element)])


# ----------------------------------------------------------------------
# estimation


@dataclass
class Candidate:
    kind: str  # "p" or "hp"
    degrees: tuple | None
    reduction: float


@dataclass
class ElementEstimate:
    element: int
    reduction: float
    best: object  # "p" or a tuple of child degrees
    candidates: list = field(default_factory=list)

    @property
    def best_is_p(self):
        return self.best == P_REFINE


@dataclass
class AdaptConfig:
    theta: float = 1.0 / 3.0
    nmax: int | None = None
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.nmax is not None and self.nmax < 1:
            raise ValueError("nmax must be >= 1")


class ElementEstimator:
    """Local problems around one element of the current discretisation."""

    def __init__(self, mesh, degrees, space, u, problem, element, solver=None):
        self.mesh, self.degrees, self.space = mesh, np.asarray(degrees), space
        self.u = u.coefficients if hasattr(u, "coefficients") else np.asarray(u)
        self.problem = problem
        self.element = int(element)
        self.solver = solver or SolverConfig()
        self.p = int(self.degrees[self.element])
        self.dim = mesh.dim
        order = quadrature_order(self.p + 2, problem.quad_bump)
        self.segments = boundary_segments(mesh.element_coords(self.element), order)
        self._ref = None

    @staticmethod
    def patch_degrees(patch, q):
        """Degree ``q`` on the element's cells, neighbour pieces at max(own degree, q).

        Neighbours never drop below their current degree, so the local
        spaces resolve them at least as well as the global solution does.
        """
        degs = np.maximum(np.asarray(patch.degrees, dtype=int), q)
        degs[list(patch.kappa_cells)] = q
        return degs

    # -- reference solution on the refined patch -----------------------

    def reference(self):
        """(patch problem, functional, u_ref coefficients, flux field)."""
        if self._ref is None:
            patch = build_refined_patch(self.mesh, self.element, self.degrees)
            ref = self.patch_degrees(patch, self.p + 1)
            sup = ref.copy()
            if self.dim == 2:
                sup[patch.kappa_cells] = self.p + 2
            pp = PatchProblem(patch, sup, self.problem, self.space, self.u)
            xref, _ = pp.solve(ref, self.solver)
            fun = KappaFunctional(pp, self.segments)
            self._ref = (pp, fun, xref, fun.flux(xref))
        return self._ref

    def reference_reduction(self):
        pp, fun, xref, flux = self.reference()
        return fun.modified_hp(flux) - fun.modified(xref, flux)

    def hp_reduction(self, child_degrees):
        pp, fun, xref, flux = self.reference()
        degs = self.patch_degrees(pp.patch, self.p)
        degs[pp.patch.kappa_cells] = child_degrees
        x, _ = pp.solve(degs, self.solver, start=xref, chord_at=xref)
        return fun.modified_hp(flux) - fun.modified(x, flux)

    def unrefined_reduction(self, patch_degrees):
        """Reduction for a candidate on the unrefined patch with given local degrees."""
        _, _, _, flux = self.reference()
        patch = build_patch(self.mesh, self.element, self.degrees)
        patch_degrees = np.asarray(patch_degrees, dtype=int)
        pp = PatchProblem(patch, patch_degrees, self.problem, self.space, self.u)
        x, _ = pp.solve(patch_degrees, self.solver)
        fun = KappaFunctional(pp, self.segments)
        return fun.modified_hp(flux) - fun.modified(x, flux)

    def p_reduction(self):
        patch = build_patch(self.mesh, self.element, self.degrees)
        return self.unrefined_reduction(self.patch_degrees(patch, self.p + 1))

    def null_reduction(self):
        """Reduction of the unchanged local space (zero up to roundoff)."""
        patch = build_patch(self.mesh, self.element, self.degrees)
        return self.unrefined_reduction(patch.degrees)


def estimate_element(mesh, degrees, space, u, problem, element, config=None, iteration=0):
    """Best predicted energy reduction of ``element`` and the winning refinement.

    Returns an :class:`ElementEstimate`; if a local solve fails, the
    reduction is ``-inf`` and the element is never marked.
    """
    config = config or AdaptConfig()
    est = ElementEstimator(mesh, degrees, space, u, problem, element, config.solver)
    tuples = enumerate_candidates(est.p, mesh.dim)
    if config.nmax is not None:
        tuples = subsample(tuples, config.nmax, element_rng(config.seed, iteration, element))
    try:
        cands = [Candidate("p", None, float(est.p_reduction()))]
        for t in tuples:
            cands.append(Candidate("hp", tuple(t), float(est.hp_reduction(t))))
    except SolverError as exc:
        log.warning("element %d excluded from marking: %s", element, exc)
        return ElementEstimate(int(element), -np.inf, None, [])
    best = cands[0]
    for c in cands[1:]:
        if c.reduction > best.reduction:  # ties keep P, then the first tuple
            best = c
    if not np.isfinite(best.reduction):
        raise ValueError(f"non-finite reduction on element {element}")
    return ElementEstimate(int(element), best.reduction,
                           P_REFINE if best.kind == "p" else best.degrees, cands)


def mark(reductions, theta=1.0 / 3.0):
    """Indices whose reduction exceeds ``theta`` times the maximum.

    ``reductions`` is a mapping (id -> value) or a sequence.  Non-positive
    reductions are never marked.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    items = reductions.items() if isinstance(reductions, dict) else enumerate(reductions)
    items = [(k, float(v)) for k, v in items]
    if not items:
        return []
    top = max(v for _, v in items)
    if not top > 0:
        return []
    return sorted(k for k, v in items if v > 0 and v > theta * top)


# ----------------------------------------------------------------------
# adaptive loop


@dataclass
class Record:
    iteration: int
    ndof: int
    energy: float
    energy_gap: float
    err_energy_norm: float
    err_Lp: float
    err_W1p: float
    seconds: float
    newton_iterations: int = 0
    n_elements: int = 0


@dataclass
class AdaptState:
    mesh: object
    degrees: np.ndarray
    space: Space | None = None
    u: object = None
    iteration: int = 0
    records: list = field(default_factory=list)
    converged: bool = False
    last_estimates: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    @classmethod
    def initial(cls, problem, mesh=None, degree=1):
        mesh = problem.initial_mesh() if mesh is None else mesh
        return cls(mesh, np.full(mesh.n_elements, int(degree), dtype=int))


def _solve_and_record(state, problem, config, previous=None, t0=None):
    space = Space(state.mesh, state.degrees)
    initial = None
    if previous is not None:
        initial = transfer(previous[0], previous[1], space, problem)
    u, info = solve_global(space, problem, config.solver, initial=initial, return_info=True)
    state.space, state.u = space, u
    errs = error_norms(space, problem, u)
    rec = Record(state.iteration, space.n_dofs, errs["energy"], errs["energy_gap"],
                 errs["err_energy_norm"], errs["err_Lp"], errs["err_W1p"],
                 time.perf_counter() - (t0 or time.perf_counter()), info.iterations,
                 len(state.mesh.leaves))
    state.records.append(rec)
    return rec


def estimate_all(state, problem, config):
    leaves = [int(e) for e in state.mesh.leaves]

    def work(e):
        return estimate_element(state.mesh, state.degrees, state.space, state.u,
                                problem, e, config, state.iteration)

    if config.threads and config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(work, leaves))
    else:
        results = [work(e) for e in leaves]
    return {r.element: r for r in results}


def adapt_step(state, problem, config, t0=None):
    """Estimate, mark, refine and re-solve; appends one record to ``state``."""
    if state.u is None:
        _solve_and_record(state, problem, config, t0=t0)
    estimates = estimate_all(state, problem, config)
    state.last_estimates = estimates
    marked = mark({e: r.reduction for e, r in estimates.items()}, config.theta)
    if not marked:
        state.converged = True
        return state
    decisions = {e: estimates[e].best for e in marked}
    state.history.append(decisions)
    previous = (state.space, state.u.coefficients)
    state.mesh, state.degrees = apply_refinements(state.mesh, state.degrees, decisions)
    state.iteration += 1
    _solve_and_record(state, problem, config, previous, t0)
    return state


def run_adaptive(problem, config=None, iterations=10, mesh=None, degree=1, max_dofs=None,
                 callback=None):
    """Run the adaptive loop; returns the final :class:`AdaptState`.

    ``callback(state)`` is invoked after the initial solve and after every
    refinement step.
    """
    config = config or AdaptConfig()
    t0 = time.perf_counter()
    state = AdaptState.initial(problem, mesh, degree)
    _solve_and_record(state, problem, config, t0=t0)
    if callback:
        callback(state)
    while state.iteration < iterations:
        if max_dofs is not None and state.space.n_dofs >= max_dofs:
            break
        adapt_step(state, problem, config, t0)
        if state.converged:
            break
        if callback:
            callback(state)
    return state
