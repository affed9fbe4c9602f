import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hpenergy import forms
from hpenergy.estimator import boundary_segments
from hpenergy.fespace import (FEFunction, Space, constrain_dirichlet, count_center_dofs_2d,
                              p_target_dofs)
from hpenergy.mesh import Mesh, MeshError, apply_refinements, interval_mesh, lshape_mesh, square_mesh
from hpenergy.problems import builtin_problem

from conftest import single_triangle


@pytest.mark.parametrize("p", range(1, 9))
def test_single_triangle_dimension(p):
    assert Space(single_triangle(), [p]).n_dofs == (p + 1) * (p + 2) // 2


def test_minimum_rule_on_shared_edge(unit_square):
    sp = Space(unit_square, [3, 1])
    shared = [e for e, cs in enumerate(sp.edge_cells) if len(cs) == 2]
    assert len(shared) == 1 and sp.edge_degree[shared[0]] == 1
    # vertices 4 + edges of the degree 3 cell (2 outer edges with 2 modes) + 1 bubble
    assert sp.n_dofs == 4 + 2 * 2 + 1


def test_nonconforming_mesh_rejected(unit_square):
    unit_square.refine_red(0)
    with pytest.raises(MeshError):
        Space(unit_square, np.ones(unit_square.n_elements, int))


def test_interval_space_counts():
    sp = Space(interval_mesh(4), [1, 2, 3, 4])
    assert sp.n_dofs == 5 + 1 + 2 + 3


def _refined_reference(degrees):
    m = single_triangle()
    kids = m.refine_red(0)
    d = np.zeros(m.n_elements, dtype=int)
    d[kids] = degrees
    return Space(m, d)


@pytest.mark.parametrize("p", range(1, 7))
def test_center_count_matches_basis_enumeration_uniform(p):
    assert count_center_dofs_2d(p, p, p, p) == _refined_reference([p] * 4).n_dofs


@settings(max_examples=60, deadline=None)
@given(st.tuples(*[st.integers(1, 7)] * 4))
def test_center_count_matches_basis_enumeration(t):
    # corner children own both outer half-edges, so the isolated refined triangle
    # carries exactly the counted modes
    assert count_center_dofs_2d(*t) == _refined_reference(list(t)).n_dofs


def test_count_examples():
    assert count_center_dofs_2d(1, 1, 1, 1) == 6
    assert count_center_dofs_2d(2, 2, 1, 1) == 10
    assert count_center_dofs_2d(3, 3, 3, 3) == 28
    with pytest.raises(ValueError):
        count_center_dofs_2d(0, 1, 1, 1)


@pytest.mark.parametrize("p", range(1, 9))
def test_target_counts_equal_enriched_element(p):
    # raising the degree by one gives the full space of degree p + 1 on the element
    assert p_target_dofs(p, 2) == Space(single_triangle(), [p + 1]).n_dofs
    assert p_target_dofs(p, 1) == Space(interval_mesh(1), [p + 1]).n_dofs


def test_target_count_values():
    assert p_target_dofs(1, 2) == 6
    assert p_target_dofs(2, 2) == 10
    assert p_target_dofs(3, 1) == 5


def test_partition_of_unity_and_linear_reproduction():
    m = lshape_mesh()
    sp = Space(m, np.arange(m.n_elements) % 4 + 1)
    one = sp.interpolate_vertices(lambda x: np.ones(len(x)))
    lin = sp.interpolate_vertices(lambda x: 2 * x[:, 0] - 3 * x[:, 1])
    f1, fl = FEFunction(sp, one), FEFunction(sp, lin)
    for e in m.leaves:
        v, g = f1.evaluate(int(e), [0.2, 0.3])
        assert v == pytest.approx(1.0)
        v, g = fl.evaluate(int(e), [0.2, 0.3])
        assert np.allclose(g, [2, -3])


def test_hat_function_values():
    sp = Space(single_triangle(), [2])
    u = np.zeros(sp.n_dofs)
    u[sp.vertex_dof[0]] = 1.0
    f = FEFunction(sp, u)
    assert f(0, [0.0, 0.0]) == pytest.approx(1.0)
    assert f(0, [0.5, 0.5]) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(MeshError):
        f.evaluate(5, [0.1, 0.1])


def test_global_continuity_across_faces(rng):
    m = lshape_mesh()
    m, d = apply_refinements(m, np.ones(m.n_elements, int), {0: (3, 1, 2, 4), 5: "p", 7: (2, 2, 2, 2)})
    d = np.where(d > 0, d, 1) + (np.arange(len(d)) % 3)
    sp = Space(m, d)
    u = rng.standard_normal(sp.n_dofs)
    for c in range(sp.n_cells):
        pts, _, _ = boundary_segments(sp.coords[c], 8)
        for s in pts:
            other = [k for k in range(sp.n_cells) if k != c
                     and np.all(np.abs(sp.to_reference(k, s)).max() < 2)]
            v0 = sp.eval_physical(u, c, s)[0]
            for k in other:
                lam_ok = np.all(sp.to_reference(k, s) >= -1e-12) and np.all(sp.to_reference(k, s).sum(axis=1) <= 1 + 1e-12)
                if lam_ok:
                    assert np.allclose(sp.eval_physical(u, k, s)[0], v0, atol=1e-12)


def test_constant_recovered_by_mass_solve():
    m = lshape_mesh()
    sp = Space(m, np.arange(m.n_elements) % 3 + 1)
    prob = builtin_problem("ex2")
    asm = forms.assembler(sp, prob)
    M = asm.mass(dense=True)
    b = asm.project_rhs(lambda g: np.full(g.X.shape[:2], 2.5))
    x = np.linalg.solve(M, b)
    assert np.allclose(x[sp.vertex_dof[sp.vertex_dof >= 0]], 2.5)
    assert np.allclose(np.delete(x, sp.vertex_dof[sp.vertex_dof >= 0]), 0.0, atol=1e-11)


def test_constrain_dirichlet_reproduces_traces(rng):
    sp = Space(square_mesh(2), [3] * 8)
    w = rng.standard_normal(sp.n_dofs)
    c = constrain_dirichlet(sp, sp.boundary_faces, lambda x: _eval_anywhere(sp, w, x))
    assert np.allclose(c.values, w[c.dofs], atol=1e-12)
    assert set(c.dofs) == set(sp.boundary_dofs)
    z = constrain_dirichlet(sp, sp.boundary_faces, lambda x: np.zeros(len(x)))
    assert np.all(z.values == 0)
    lin = constrain_dirichlet(sp, sp.boundary_faces, lambda x: x[:, 0])
    X = sp.mesh.vertices
    for dof, val in zip(lin.dofs, lin.values):
        if sp.dof_kind[dof] == 0:
            v = np.flatnonzero(sp.vertex_dof == dof)[0]
            assert val == pytest.approx(X[v, 0])
        else:
            assert val == pytest.approx(0.0, abs=1e-13)


def _eval_anywhere(sp, w, x):
    out = np.empty(len(x))
    for i, pt in enumerate(x):
        for c in range(sp.n_cells):
            r = sp.to_reference(c, pt[None])[0]
            if r.min() >= -1e-12 and r.sum() <= 1 + 1e-12:
                out[i] = sp.eval_physical(w, c, pt[None])[0][0]
                break
    return out


def test_submask_is_nested_subspace(rng):
    m = square_mesh(2)
    sp = Space(m, [4] * 8)
    lo = np.array([1, 2, 3, 4, 2, 1, 3, 2])
    mask = sp.submask(lo)
    assert mask.sum() == Space(m, lo).n_dofs
    with pytest.raises(ValueError):
        sp.submask([5] * 8)
