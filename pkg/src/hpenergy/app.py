"""
Experiment driver: run configuration, convergence output, hp-mesh rendering
and a self-check suite.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
from scipy import stats

from . import forms
from .adapt import AdaptConfig, AdaptState, adapt_step, enumerate_candidates, mark, _solve_and_record
from .estimator import error_norms, global_modified_energies
from .fespace import Space, count_center_dofs_2d, p_target_dofs
from .mesh import interval_mesh, lshape_mesh, save_mesh, square_mesh
from .problems import builtin_problem
from .solve import SolverConfig, SolverError, dirichlet_constraints, solve_global

log = logging.getLogger(__name__)

CSV_COLUMNS = ["iter", "ndof", "energy", "energy_gap", "err_energy_norm", "err_Lp", "err_W1p",
               "seconds", "dof_axis"]

# iteration counts of the reference experiments
DEFAULT_ITERATIONS = {"ex1": 15, "ex2": 18, "ex3": 18}

# one colour per degree 1..10; higher degrees reuse the last entry
PALETTE = ["#3b4cc0", "#5977e3", "#7b9ff9", "#9ebeff", "#c0d4f5",
           "#f2cbb7", "#f7ac8e", "#ee8468", "#d65244", "#b40426"]


# ----------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Settings of one adaptive run.

    ``mesh`` selects the initial mesh: ``"default"`` uses the problem's own,
    ``"interval:N"``, ``"square:N"`` and ``"lshape"`` build structured meshes.
    ``problem_args`` are forwarded to the problem factory (``eps`` for ex1,
    ``p`` and ``alpha`` for ex3).
    """

    problem: str = "ex1"
    mesh: str = "default"
    degree: int = 1
    theta: float = 1.0 / 3.0
    nmax: int | None = None
    iterations: int | None = None  # None: the problem's reference count
    seed: int = 0
    out: str = "out"
    quad_bump: int | None = None
    threads: int = 1
    newton_tol: float = 1e-10
    max_newton_iters: int = 30
    record_time: bool = False
    render: bool = True
    problem_args: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.iterations is None:
            self.iterations = DEFAULT_ITERATIONS.get(self.problem, 10)
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")

    def adapt_config(self):
        solver = SolverConfig(newton_tol=self.newton_tol, max_newton_iters=self.max_newton_iters)
        return AdaptConfig(theta=self.theta, nmax=self.nmax, seed=self.seed, solver=solver,
                           threads=self.threads)

    def build_problem(self):
        prob = builtin_problem(self.problem, **self.problem_args)
        if self.quad_bump is not None:
            prob.quad_bump = int(self.quad_bump)
        return prob

    def build_mesh(self, problem):
        kind, _, arg = self.mesh.partition(":")
        if kind == "default":
            return problem.initial_mesh()
        if kind == "interval":
            return interval_mesh(int(arg or 4))
        if kind == "square":
            return square_mesh(int(arg or 2))
        if kind == "lshape":
            return lshape_mesh()
        raise ValueError(f"unknown mesh option {self.mesh!r}")


def _parse_value(text):
    text = text.strip()
    low = text.lower()
    if low in ("none", ""):
        return None
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_config_text(text):
    """Flat ``key = value`` lines; ``#`` starts a comment.

    Keys that are not :class:`RunConfig` fields are passed to the problem
    factory.
    """
    known = {f.name for f in fields(RunConfig)}
    out, extra = {}, {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        (out if key in known else extra)[key] = _parse_value(val)
    if extra:
        out["problem_args"] = extra
    return out


def load_config(path, **overrides):
    """RunConfig from a config file, with non-None ``overrides`` applied on top."""
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


# ----------------------------------------------------------------------
# rendering


def _colour(p):
    return PALETTE[min(max(int(p), 1), len(PALETTE)) - 1]


def render_mesh(mesh, degrees, path, zoom=None, size=480, title=None):
    """Write an SVG of the leaf mesh coloured by polynomial degree.

    Parameters
    ----------
    zoom : tuple, optional
        ``(xmin, xmax, ymin, ymax)`` window in physical coordinates (2D) or
        ``(xmin, xmax)`` (1D).  Elements outside the window are skipped.
    """
    degrees = np.asarray(degrees)
    leaves = [int(e) for e in mesh.leaves]
    X = mesh.vertices
    used = sorted({int(degrees[e]) for e in leaves})
    pad, legend_w = 10, 90
    parts = []
    if mesh.dim == 1:
        lo, hi = (float(X[:, 0].min()), float(X[:, 0].max())) if zoom is None else zoom[:2]
        width, height = size, 90
        sx = (width - 2 * pad) / (hi - lo)
        for e in leaves:
            a, b = sorted(float(v) for v in mesh.element_coords(e)[:, 0])
            if b < lo or a > hi:
                continue
            x0, x1 = pad + (max(a, lo) - lo) * sx, pad + (min(b, hi) - lo) * sx
            p = int(degrees[e])
            parts.append(f'<rect x="{x0:.3f}" y="30" width="{max(x1 - x0, 0.2):.3f}" height="20" '
                         f'fill="{_colour(p)}" stroke="black" stroke-width="0.5"/>')
            parts.append(f'<text x="{0.5 * (x0 + x1):.3f}" y="66" font-size="9" '
                         f'text-anchor="middle">{p}</text>')
    else:
        if zoom is None:
            xmin, ymin = X.min(axis=0)
            xmax, ymax = X.max(axis=0)
        else:
            xmin, xmax, ymin, ymax = zoom
        scale = (size - 2 * pad) / max(xmax - xmin, ymax - ymin)
        width, height = size, size

        def tx(pt):
            return pad + (pt[0] - xmin) * scale, height - pad - (pt[1] - ymin) * scale

        for e in leaves:
            c = mesh.element_coords(e)
            if zoom is not None and (c[:, 0].max() < xmin or c[:, 0].min() > xmax
                                     or c[:, 1].max() < ymin or c[:, 1].min() > ymax):
                continue
            pts = " ".join("{:.3f},{:.3f}".format(*tx(v)) for v in c)
            parts.append(f'<polygon points="{pts}" fill="{_colour(degrees[e])}" '
                         f'stroke="black" stroke-width="0.3"/>')
    total_w = width + legend_w
    for k, p in enumerate(used):
        y = pad + 16 * k
        parts.append(f'<rect x="{width + 10}" y="{y}" width="12" height="12" fill="{_colour(p)}" '
                     f'stroke="black" stroke-width="0.5"/>')
        parts.append(f'<text x="{width + 28}" y="{y + 10}" font-size="11">p = {p}</text>')
    height = max(height, pad + 16 * len(used) + pad)
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{height}" '
            f'viewBox="0 0 {total_w} {height}">')
    if title:
        head += f"<title>{escape(title)}</title>"
    body = "\n".join([head, f'<rect width="{total_w}" height="{height}" fill="white"/>', *parts, "</svg>"])
    Path(path).write_text(body + "\n")
    return path


# ----------------------------------------------------------------------
# convergence output


def dof_axis(ndof, dim):
    """Horizontal axis of the convergence plots: DoF in 1D, its cube root in 2D."""
    ndof = np.asarray(ndof, dtype=float)
    return ndof if dim == 1 else np.cbrt(ndof)


def regression(x, y):
    """Least-squares fit of log10(y) against x; returns (slope, r_squared).

    Non-positive or non-finite errors are dropped.
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    ok = np.isfinite(y) & (y > 0)
    if ok.sum() < 3:
        return float("nan"), float("nan")
    fit = stats.linregress(x[ok], np.log10(y[ok]))
    return float(fit.slope), float(fit.rvalue ** 2)


def _fmt(v):
    return repr(float(v)) if np.isfinite(v) else "nan"


def write_csv(path, records, dim, record_time=False):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([r.iteration, r.ndof, _fmt(r.energy), _fmt(r.energy_gap),
                        _fmt(r.err_energy_norm), _fmt(r.err_Lp), _fmt(r.err_W1p),
                        _fmt(r.seconds) if record_time else "nan",
                        _fmt(dof_axis(r.ndof, dim))])


def read_csv(path):
    """Convergence CSV as a dict of float arrays keyed by column."""
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]} if rows else {}


def summarise(records, dim, last=8):
    """Regression slopes and R^2 of each error column over the last ``last`` records."""
    rec = records[-last:]
    x = dof_axis([r.ndof for r in rec], dim)
    out = {"n_points": len(rec), "axis": "ndof" if dim == 1 else "ndof^(1/3)"}
    for name in ("energy_gap", "err_energy_norm", "err_Lp", "err_W1p"):
        slope, r2 = regression(x, [getattr(r, name) for r in rec])
        out[name] = {"slope": slope, "r2": r2}
    return out


# ----------------------------------------------------------------------
# run


@dataclass
class RunResult:
    state: AdaptState
    config: RunConfig
    summary: dict
    out: Path
    ok: bool = True


def run(config, log_progress=True):
    """Run the adaptive loop and write the artifacts to ``config.out``.

    Files: ``convergence.csv``, ``mesh_NNN.svg`` per iteration,
    ``final_mesh.txt`` (mesh + degrees), ``final_solution.npz``,
    ``timings.csv`` and ``summary.json``.  On a solver failure the files
    written so far are kept and ``ok`` is False.
    """
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = config.build_problem()
    acfg = config.adapt_config()
    state = AdaptState.initial(problem, config.build_mesh(problem), config.degree)
    t0 = time.perf_counter()
    dim = state.mesh.dim
    csv_path = out / "convergence.csv"
    ok = True

    def emit():
        write_csv(csv_path, state.records, dim, config.record_time)
        with open(out / "timings.csv", "w") as fh:
            fh.write("iter,seconds\n")
            for r in state.records:
                fh.write(f"{r.iteration},{r.seconds:.3f}\n")
        if config.render:
            render_mesh(state.mesh, state.degrees, out / f"mesh_{state.iteration:03d}.svg",
                        title=f"{problem.name} iteration {state.iteration}")
        if log_progress:
            r = state.records[-1]
            log.info("iter %d ndof %d energy %.10g gap %.3e (%.1fs)", r.iteration, r.ndof,
                     r.energy, r.energy_gap, r.seconds)

    try:
        _solve_and_record(state, problem, acfg, t0=t0)
        emit()
        while state.iteration < config.iterations:
            adapt_step(state, problem, acfg, t0)
            if state.converged:
                log.info("no element marked; stopping")
                break
            emit()
    except SolverError as exc:
        log.error("solver failure: %s", exc)
        ok = False

    summary = summarise(state.records, dim) if state.records else {}
    summary.update({"problem": problem.name, "iterations": state.iteration, "ok": ok,
                    "exact_energy": problem.exact_energy,
                    "final_ndof": state.records[-1].ndof if state.records else None})
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    save_mesh(out / "final_mesh.txt", state.mesh, state.degrees)
    if state.u is not None:
        sp = state.space
        np.savez(out / "final_solution.npz", coefficients=state.u.coefficients,
                 vertices=state.mesh.vertices, leaves=np.asarray(sp.cells),
                 elements=np.asarray(state.mesh.leaf_elements), degrees=np.asarray(sp.degrees))
    return RunResult(state, config, summary, out, ok)


# ----------------------------------------------------------------------
# self checks


@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<40s} {self.value:.3e} (tol {self.tol:.1e})"


def _perturbed(problem, delta):
    """Copy of ``problem`` with ``delta * xi`` added to the flux; the gradient check must catch it."""
    dmu = problem.dmu
    return replace(problem, dmu=lambda xi: dmu(xi) + delta * xi)


def _random_state(space, problem, rng, scale=0.3):
    cons = dirichlet_constraints(space, problem)
    u = scale * rng.standard_normal(space.n_dofs)
    return cons.apply(u), cons


def gradient_check(problem, rng, n_states=3, t=1e-5):
    """Worst relative error of residual vs central differences of the energy."""
    space = Space(problem.initial_mesh(), np.full(problem.initial_mesh().n_elements, 2))
    worst = 0.0
    for _ in range(n_states):
        u, _ = _random_state(space, problem, rng)
        r = forms.residual(space, problem, u)
        d = rng.standard_normal(space.n_dofs)
        fd = (forms.energy(space, problem, u + t * d) - forms.energy(space, problem, u - t * d)) / (2 * t)
        worst = max(worst, abs(fd - r @ d) / max(abs(fd), 1e-12))
    return worst


def hessian_check(problem, rng, n_states=3, t=1e-6):
    """Worst relative error of J d vs central differences of the residual."""
    space = Space(problem.initial_mesh(), np.full(problem.initial_mesh().n_elements, 2))
    worst = 0.0
    for _ in range(n_states):
        u, _ = _random_state(space, problem, rng)
        d = rng.standard_normal(space.n_dofs)
        J = forms.jacobian(space, problem, u)
        fd = (forms.residual(space, problem, u + t * d) - forms.residual(space, problem, u - t * d)) / (2 * t)
        worst = max(worst, np.linalg.norm(fd - J @ d) / max(np.linalg.norm(fd), 1e-12))
    return worst


def dof_matching_check(pmax=8):
    """Number of mismatches between the candidate list and a direct brute force."""
    bad = 0
    for p in range(1, pmax + 1):
        target = (p + 2) * (p + 3) // 2
        brute = set()
        for t in np.ndindex(*(p + 2,) * 4):
            t = tuple(int(k) + 1 for k in t)
            if count_center_dofs_2d(*t) == target:
                brute.add(t)
        bad += len(brute ^ set(enumerate_candidates(p, 2)))
        bad += int(p_target_dofs(p, 2) != target)
    return bad


def telescoping_check(problem, rng, n_states=5):
    """Worst |sum_K E~_K(v) - E(v)| / (1 + |E(v)|) over random v vanishing on the boundary."""
    mesh = problem.initial_mesh()
    space = Space(mesh, np.full(mesh.n_elements, 2))
    cons = dirichlet_constraints(space, problem)
    worst = 0.0
    for _ in range(n_states):
        v = rng.standard_normal(space.n_dofs)
        v[cons.dofs] = 0.0
        w = rng.standard_normal(space.n_dofs)
        E = forms.energy(space, problem, v)
        tot = float(np.sum(global_modified_energies(space, problem, v, w)))
        worst = max(worst, abs(tot - E) / (1 + abs(E)))
    return worst


def linear_identity_check():
    """|gap + 1/2 ||u* - u_h||_E^2| / |E(u*)| for the reaction-diffusion example with eps = 1."""
    problem = builtin_problem("ex1", eps=1.0)
    mesh = interval_mesh(8)
    space = Space(mesh, np.full(mesh.n_elements, 2))
    u = solve_global(space, problem)
    errs = error_norms(space, problem, u, extra=10)
    Eex = problem.exact_energy
    return abs((Eex - errs["energy"]) + 0.5 * errs["err_energy_norm"] ** 2) / abs(Eex)


def marking_check(seed=0):
    """1 if raising theta ever enlarges the marked set on random reductions, else 0."""
    rng = np.random.default_rng(seed)
    for _ in range(20):
        red = rng.exponential(size=30)
        if not set(mark(red, 0.9)) <= set(mark(red, 1.0 / 3.0)):
            return 1.0
    return 0.0


def verify(fault=False, seed=0):
    """Run the self-check suite; returns a list of :class:`Check`.

    With ``fault=True`` the flux of every problem is perturbed by
    ``0.01 * grad u`` (left out of the energy), so the gradient checks must fail.
    """
    rng = np.random.default_rng(seed)
    checks = []
    for name in ("ex1", "ex2", "ex3"):
        prob = builtin_problem(name)
        if fault:
            prob = _perturbed(prob, 0.01)
        err = gradient_check(prob, rng)
        checks.append(Check(f"gradient {name}", err, 1e-5, err <= 1e-5))
        err = hessian_check(prob, rng)
        checks.append(Check(f"hessian {name}", err, 1e-5, err <= 1e-5))
    bad = dof_matching_check()
    checks.append(Check("dof matching (p = 1..8)", bad, 0, bad == 0))
    for name in ("ex1", "ex2", "ex3"):
        err = telescoping_check(builtin_problem(name), rng)
        checks.append(Check(f"telescoping {name}", err, 1e-8, err <= 1e-8))
    err = linear_identity_check()
    checks.append(Check("linear energy identity", err, 1e-8, err <= 1e-8))
    err = marking_check(seed)
    checks.append(Check("marking monotone in theta", err, 0, err == 0))
    return checks


def threads_from_env(default=1):
    try:
        return max(1, int(os.environ.get("HP_ENERGY_THREADS", default)))
    except ValueError:
        return default
