import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hpenergy import forms
from hpenergy.fespace import Space
from hpenergy.mesh import interval_mesh, lshape_mesh, square_mesh
from hpenergy.problems import ProblemDef, builtin_problem, ex1_exact_energy
from hpenergy.solve import dirichlet_constraints

PROBLEMS = ["ex1", "ex2", "ex3"]


def _dirichlet_laplace(dim):
    return ProblemDef("laplace", dim, mu=lambda xi: 0.5 * np.sum(xi * xi, axis=-1), dmu=lambda xi: xi,
                      d2mu=lambda xi: np.broadcast_to(np.eye(dim), xi.shape + (dim,)),
                      f=lambda x: np.zeros(x.shape[:-1]), dirichlet=lambda x: np.zeros(x.shape[:-1]),
                      linear=True, initial_mesh=lambda: interval_mesh(2))


def _space(name, p=2):
    prob = builtin_problem(name)
    m = prob.initial_mesh()
    return prob, Space(m, np.full(m.n_elements, p))


def test_hat_energy_by_hand():
    prob = _dirichlet_laplace(1)
    sp = Space(interval_mesh(2), [1, 1])
    u = np.zeros(sp.n_dofs)
    u[sp.vertex_dof[1]] = 1.0
    # slope 2 on both halves: 1/2 * 4 * 1
    assert forms.energy(sp, prob, u) == pytest.approx(2.0, rel=1e-14)


@pytest.mark.parametrize("name", PROBLEMS)
def test_zero_function_energy(name):
    # E(0) = |domain| * (mu(0) + g(0)); mu(0) is not zero for every problem
    prob, sp = _space(name)
    area = prob.initial_mesh().total_measure()
    z = np.zeros(prob.dim)
    expected = area * float(prob.mu(z) + prob.g(np.zeros(1))[0])
    assert forms.energy(sp, prob, np.zeros(sp.n_dofs)) == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("name", PROBLEMS)
def test_element_energies_add_up(name, rng):
    prob, sp = _space(name, 3)
    u = rng.standard_normal(sp.n_dofs)
    parts = [forms.element_energy(sp, prob, u, e) for e in sp.cells]
    assert sum(parts) == pytest.approx(forms.energy(sp, prob, u), rel=1e-12)


def test_ex1_exact_energy_by_quadrature():
    from scipy import integrate
    prob = builtin_problem("ex1", eps=1.0)
    ex = lambda x: prob.exact(np.array([[x]]))[0]
    dex = lambda x: prob.exact_grad(np.array([[x]]))[0, 0]
    val, _ = integrate.quad(lambda x: 0.5 * dex(x) ** 2 + 0.5 * ex(x) ** 2 - ex(x), 0, 1, epsabs=1e-14)
    assert val == pytest.approx(prob.exact_energy, rel=1e-12)
    assert ex1_exact_energy(1.0) == pytest.approx(-0.5 * (1 - 2 * (np.e - 1) / (np.e + 1)), rel=1e-14)


@pytest.mark.parametrize("name", PROBLEMS)
def test_residual_is_energy_gradient(name, rng):
    prob, sp = _space(name, 3)
    cons = dirichlet_constraints(sp, prob)
    t = 1e-5
    for _ in range(4):
        u = cons.apply(0.5 * rng.standard_normal(sp.n_dofs))
        r = forms.residual(sp, prob, u)
        for i in rng.choice(sp.n_dofs, 5, replace=False):
            e = np.zeros(sp.n_dofs)
            e[i] = t
            fd = (forms.energy(sp, prob, u + e) - forms.energy(sp, prob, u - e)) / (2 * t)
            assert fd == pytest.approx(r[i], rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("name", PROBLEMS)
def test_jacobian_is_residual_derivative_and_symmetric(name, rng):
    prob, sp = _space(name, 3)
    u = 0.5 * rng.standard_normal(sp.n_dofs)
    J = forms.jacobian(sp, prob, u)
    d = rng.standard_normal(sp.n_dofs)
    t = 1e-6
    fd = (forms.residual(sp, prob, u + t * d) - forms.residual(sp, prob, u - t * d)) / (2 * t)
    assert np.linalg.norm(J @ d - fd) <= 1e-6 * np.linalg.norm(fd)
    Jd = J.toarray()
    assert np.abs(Jd - Jd.T).max() <= 1e-12 * np.abs(Jd).max()
    assert np.allclose(forms.jacobian(sp, prob, u, dense=True), Jd)


def test_jacobian_constrained_rows_are_identity(rng):
    prob, sp = _space("ex2")
    cons = dirichlet_constraints(sp, prob)
    J = forms.jacobian(sp, prob, rng.standard_normal(sp.n_dofs), constraints=cons).toarray()
    sub = J[np.ix_(cons.dofs, np.arange(sp.n_dofs))]
    assert np.allclose(sub, np.eye(sp.n_dofs)[cons.dofs])
    r = forms.residual(sp, prob, rng.standard_normal(sp.n_dofs), constraints=cons)
    assert np.all(r[cons.dofs] == 0)


def test_reaction_diffusion_jacobian_is_stiffness_plus_mass(rng):
    prob = builtin_problem("ex1", eps=1.0)
    sp = Space(interval_mesh(3), [2, 3, 1])
    J1 = forms.jacobian(sp, prob, rng.standard_normal(sp.n_dofs)).toarray()
    J2 = forms.jacobian(sp, prob, rng.standard_normal(sp.n_dofs)).toarray()
    assert np.allclose(J1, J2)
    M = forms.assembler(sp, prob).mass(dense=True)
    lap = forms.jacobian(sp, _dirichlet_laplace(1), np.zeros(sp.n_dofs)).toarray()
    assert np.allclose(J1, lap + M)


def test_polynomial_energy_is_exact():
    # u = x (1 - x) on one p = 2 element; int 1/2 u'^2 = 1/6
    prob = _dirichlet_laplace(1)
    sp = Space(interval_mesh(1), [2])
    u = np.zeros(sp.n_dofs)
    u[sp.bubble_start[0]] = 1.0
    val, grad = sp.eval_physical(u, 0, np.array([[0.5]]))
    scale = 0.25 / val[0]
    assert forms.energy(sp, prob, scale * u) == pytest.approx(1 / 6, rel=1e-13)


@pytest.mark.parametrize("name", PROBLEMS)
def test_mu_derivatives_and_convexity(name, rng):
    prob = builtin_problem(name)
    d = prob.dim
    h = 1e-6
    for _ in range(20):
        xi = rng.standard_normal(d) + 0.1
        fd = np.array([(prob.mu(xi + h * e) - prob.mu(xi - h * e)) / (2 * h) for e in np.eye(d)])
        assert np.allclose(fd, prob.dmu(xi), rtol=1e-6, atol=1e-12)
        fd2 = np.array([(prob.dmu(xi + h * e) - prob.dmu(xi - h * e)) / (2 * h) for e in np.eye(d)])
        assert np.allclose(fd2.T, prob.d2mu(xi[None])[0], rtol=1e-5, atol=1e-10)
        x2 = rng.standard_normal(d) * 2
        t = rng.uniform(0.05, 0.95)
        assert prob.mu(xi + t * (x2 - xi)) < (1 - t) * prob.mu(xi) + t * prob.mu(x2)


def test_ex2_hessian_positive_definite(rng):
    prob = builtin_problem("ex2")
    xi = 3 * rng.standard_normal((200, 2))
    assert np.all(np.linalg.eigvalsh(prob.d2mu(xi)) > 0)


def test_builtin_exact_solutions(rng):
    p1 = builtin_problem("ex1")
    eps = p1.params["eps"]
    assert p1.exact(np.array([[0.0], [1.0]])) == pytest.approx([0, 0], abs=1e-12)
    h = 1e-3
    x = np.array([[0.5 - h], [0.5], [0.5 + h]])
    u = p1.exact(x)
    # closed-form second derivative: u'' = (1 - u) / eps
    assert abs(-eps * (u[0] - 2 * u[1] + u[2]) / h ** 2 + u[1] - 1) < 1e-6

    p2 = builtin_problem("ex2")
    h = 1e-4
    for _ in range(10):
        r, phi = rng.uniform(0.2, 0.9), rng.uniform(0.1, 1.4 * np.pi)
        x0 = np.array([r * np.cos(phi), r * np.sin(phi)])
        lap = sum(p2.exact(x0 + h * e) - 2 * p2.exact(x0) + p2.exact(x0 - h * e) for e in np.eye(2)) / h ** 2
        assert abs(lap) < 1e-5
        div = sum((p2.dmu(p2.exact_grad((x0 + h * e)[None]))[0] @ e
                   - p2.dmu(p2.exact_grad((x0 - h * e)[None]))[0] @ e) / (2 * h) for e in np.eye(2))
        assert -div == pytest.approx(p2.f(x0[None])[0], abs=1e-6)

    p3 = builtin_problem("ex3")
    for _ in range(10):
        x0 = rng.uniform(0.1, 0.9, 2)
        if np.hypot(*x0) < 0.1:
            continue
        div = sum((p3.dmu(p3.exact_grad((x0 + h * e)[None]))[0] @ e
                   - p3.dmu(p3.exact_grad((x0 - h * e)[None]))[0] @ e) / (2 * h) for e in np.eye(2))
        assert -div - p3.f(x0[None])[0] == pytest.approx(0.0, abs=1e-6)
    r = 0.37
    assert p3.f(np.array([[r, 0.0]]))[0] == pytest.approx(-9 / 32 * r ** -1.5, rel=1e-13)


def test_unknown_problem():
    with pytest.raises(ValueError, match="unknown problem"):
        builtin_problem("ex9")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 6), st.integers(0, 6))
def test_integrate_monomials_on_square(a, b):
    sp = Space(square_mesh(2), [1] * 8)
    val = forms.integrate(sp, lambda x: x[:, 0] ** a * x[:, 1] ** b, order_extra=a + b)
    assert val == pytest.approx(1.0 / ((a + 1) * (b + 1)), rel=1e-12)
