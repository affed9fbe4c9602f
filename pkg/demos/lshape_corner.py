"""Quasilinear problem on the L-shaped domain with a corner singularity.

The exact solution r^(2/3) sin(2 phi / 3) has unbounded gradient at the
re-entrant corner.  The adaptive loop geometrically grades the mesh toward
the origin while raising degrees away from it, which gives convergence like
exp(-b N^(1/3)).  The full run takes a few minutes; pass a smaller iteration
count for a quick look.  Per-iteration SVG meshes land in ``out_lshape/``.

Run with ``python demos/lshape_corner.py [iterations] [nmax]``.
"""
import sys

from hpenergy import app

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 18
nmax = int(sys.argv[2]) if len(sys.argv) > 2 else None

cfg = app.RunConfig(problem="ex2", iterations=iterations, nmax=nmax, out="out_lshape")
res = app.run(cfg)

for r in res.state.records:
    print(f"{r.iteration:3d} {r.ndof:6d} gap {r.energy_gap:.3e}  H1 err {r.err_energy_norm:.3e}")

s = res.summary
print(f"\nH1 error vs DoF^(1/3): slope {s['err_energy_norm']['slope']:+.3f}, "
      f"R^2 {s['err_energy_norm']['r2']:.3f}")

# A zoomed view shows the geometric grading at the corner.
final = res.state
app.render_mesh(final.mesh, final.degrees, res.out / "corner_zoom.svg",
                zoom=(-0.05, 0.05, -0.05, 0.05), title="corner, zoomed")
print("meshes written to", res.out)
