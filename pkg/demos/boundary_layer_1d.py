"""Singularly perturbed reaction-diffusion on (0, 1).

    -eps u'' + u = 1,  u(0) = u(1) = 0,  eps = 1e-5

The solution is 1 in the interior with layers of width sqrt(eps) at both
ends.  Starting from four linear elements, the competition between
p-enrichment and subdivision first pulls elements into the layers and then
raises their degrees, and the energy gap decays exponentially in the number
of degrees of freedom.

Run with ``python demos/boundary_layer_1d.py [iterations]``.
"""
import sys

import numpy as np

from hpenergy.adapt import AdaptConfig, run_adaptive
from hpenergy.app import dof_axis, regression
from hpenergy.problems import builtin_problem

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 15
problem = builtin_problem("ex1")


def show(state):
    r = state.records[-1]
    print(f"{r.iteration:3d} {r.ndof:5d} {r.energy_gap:11.3e} {r.err_energy_norm:11.3e} {r.err_Lp:11.3e}")


print("iter  ndof  energy gap  energy err      L2 err")
state = run_adaptive(problem, AdaptConfig(), iterations=iterations, callback=show)

# The final hp-mesh: small elements hug x = 0 and x = 1, larger ones keep
# the interior, where the solution is flat.
print("\nfinal hp-mesh (left end, width, degree):")
cells = sorted((sorted(state.mesh.element_coords(e)[:, 0]), int(state.degrees[e])) for e in state.mesh.leaves)
for (a, b), p in cells:
    print(f"  {a:.6f}  {b - a:.2e}  p={p}")

# Straight lines on a log-linear plot mean exponential convergence.
last = state.records[-8:]
x = dof_axis([r.ndof for r in last], 1)
for key in ("energy_gap", "err_energy_norm", "err_Lp"):
    slope, r2 = regression(x, [getattr(r, key) for r in last])
    print(f"{key:16s} log10-slope per DoF {slope:+.3f}  R^2 {r2:.3f}")
print("largest h:", max(np.ptp(state.mesh.element_coords(e)) for e in state.mesh.leaves))
