"""What one element sees when it decides how to refine.

For a triangle of degree p, pure p-enrichment adds a fixed number of
degrees of freedom.  Every red subdivision whose four children carry a
degree tuple with the same count competes against it.  This script lists
the competitors and evaluates all of them on one corner element of the
L-shaped problem.

Run with ``python demos/candidate_tour.py``.
"""
import numpy as np

from hpenergy.adapt import enumerate_candidates, estimate_element
from hpenergy.fespace import Space
from hpenergy.problems import builtin_problem
from hpenergy.solve import solve_global

for p in range(1, 6):
    cands = enumerate_candidates(p, 2)
    print(f"p = {p}: {len(cands):3d} hp candidates, e.g. {cands[:3]}")

problem = builtin_problem("ex2")
mesh = problem.initial_mesh()
degrees = np.full(mesh.n_elements, 2)
space = Space(mesh, degrees)
u = solve_global(space, problem)

# The element touching the re-entrant corner.
corner = next(int(e) for e in mesh.leaves
              if np.any(np.all(np.abs(mesh.element_coords(e)) < 1e-14, axis=1)))
est = estimate_element(mesh, degrees, space, u, problem, corner)
print(f"\nelement {corner} at the corner, p = 2")
for c in sorted(est.candidates, key=lambda c: -c.reduction)[:8]:
    name = "p-enrichment" if c.kind == "p" else f"subdivide {c.degrees}"
    print(f"  {name:24s} predicted reduction {c.reduction:.3e}")
print("winner:", est.best)
