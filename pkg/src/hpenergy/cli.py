"""Command line entry point: ``hp-energy run|verify|render``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import app
from .mesh import load_mesh


def _run(args):
    cfg = app.load_config(
        args.config,
        problem=args.problem,
        theta=args.theta,
        nmax=args.nmax,
        seed=args.seed,
        iterations=args.iters,
        out=args.out,
        threads=args.threads or app.threads_from_env(),
        degree=args.degree,
        mesh=args.mesh,
        quad_bump=args.quad_bump,
        record_time=True if args.record_time else None,
        render=False if args.no_render else None,
    )
    res = app.run(cfg)
    s = res.summary
    print(f"{s['problem']}: {s['iterations']} iterations, {s['final_ndof']} DoF -> {res.out}")
    for key in ("energy_gap", "err_energy_norm", "err_Lp", "err_W1p"):
        if key in s:
            print(f"  {key:<16s} slope {s[key]['slope']:+.4f}  R^2 {s[key]['r2']:.4f}  (vs {s['axis']})")
    return 0 if res.ok else 1


def _verify(args):
    checks = app.verify(fault=args.fault, seed=args.seed or 0)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 1 if failed else 0


def _render(args):
    mesh, degrees = load_mesh(args.mesh_file)
    full = [0] * mesh.n_elements
    for e, p in zip(mesh.leaves, degrees):
        full[e] = int(p)
    out = args.output or str(args.mesh_file).rsplit(".", 1)[0] + ".svg"
    app.render_mesh(mesh, full, out, zoom=args.zoom)
    print(out)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="hp-energy", description="Energy-driven hp-adaptive finite elements")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an adaptive experiment")
    r.add_argument("problem", nargs="?", help="ex1, ex2 or ex3 (or set in --config)")
    r.add_argument("--config", help="key = value settings file; flags override it")
    r.add_argument("--theta", type=float)
    r.add_argument("--nmax", type=int, help="max hp candidates sampled per element")
    r.add_argument("--seed", type=int)
    r.add_argument("--iters", type=int)
    r.add_argument("--out")
    r.add_argument("--threads", type=int, help="worker threads (default: HP_ENERGY_THREADS or 1)")
    r.add_argument("--degree", type=int, help="initial polynomial degree")
    r.add_argument("--mesh", help="default, interval:N, square:N or lshape")
    r.add_argument("--quad-bump", type=int)
    r.add_argument("--record-time", action="store_true",
                   help="write wall time into convergence.csv (makes it non-reproducible)")
    r.add_argument("--no-render", action="store_true", help="skip the per-iteration SVG files")
    r.set_defaults(func=_run)

    v = sub.add_parser("verify", help="run the self-check suite")
    v.add_argument("--fault", action="store_true", help="perturb the flux derivative (negative control)")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=_verify)

    d = sub.add_parser("render", help="draw a mesh file written by run")
    d.add_argument("mesh_file")
    d.add_argument("-o", "--output")
    d.add_argument("--zoom", type=float, nargs="+", help="xmin xmax [ymin ymax]")
    d.set_defaults(func=_render)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "run" and args.problem is None and args.config is None:
        build_parser().error("run needs a problem name or --config")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
