"""The 3-Laplacian on the unit square.

    E(u) = int |grad u|^3 / 3 - f u

with exact solution r^(3/4) and a load that is singular at the corner
(0, 0).  The runs compare full candidate enumeration with random
subsampling of at most 30 hp candidates per element.

Run with ``python demos/p_laplacian.py [iterations]``.
"""
import sys

from hpenergy.adapt import AdaptConfig, run_adaptive
from hpenergy.app import dof_axis, regression
from hpenergy.problems import builtin_problem

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 18
problem = builtin_problem("ex3")

for nmax in (None, 30):
    label = "all candidates" if nmax is None else f"at most {nmax} candidates"
    print(f"\n--- {label} ---")
    state = run_adaptive(problem, AdaptConfig(nmax=nmax, seed=0), iterations=iterations)
    for r in state.records:
        print(f"{r.iteration:3d} {r.ndof:5d} gap {r.energy_gap:.3e}  W1,3 {r.err_W1p:.3e}  "
              f"L3 {r.err_Lp:.3e}  Newton {r.newton_iterations}")
    last = state.records[-8:]
    x = dof_axis([r.ndof for r in last], 2)
    for key in ("energy_gap", "err_W1p", "err_Lp"):
        slope, r2 = regression(x, [getattr(r, key) for r in last])
        print(f"{key:10s} slope {slope:+.3f}  R^2 {r2:.3f}")
