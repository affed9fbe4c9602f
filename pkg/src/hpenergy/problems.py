"""
Convex energies  E(u) = int mu(grad u) + g(u) - f u  and the built-in examples.

All callables are vectorised: ``mu(xi)`` takes gradients of shape (..., d)
and returns (...); ``dmu`` returns (..., d) and ``d2mu`` (..., d, d).  The
scalar functions ``g, dg, d2g`` act elementwise and ``f``, ``dirichlet``,
``exact`` take points of shape (..., d).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .mesh import interval_mesh, lshape_mesh, square_mesh


def _zero(eta):
    return np.zeros_like(eta)


def _one(eta):
    return np.ones_like(eta)


@dataclass(eq=False)
class ProblemDef:
    name: str
    dim: int
    mu: Callable
    dmu: Callable
    d2mu: Callable
    f: Callable
    dirichlet: Callable
    g: Callable = _zero
    dg: Callable = _zero
    d2g: Callable = _zero
    exact: Optional[Callable] = None
    exact_grad: Optional[Callable] = None
    norm_exponent: float = 2.0
    # ||v||_E^q = a * |grad v|_{L^q}^q + b * ||v||_{L^q}^q with q = norm_exponent
    energy_norm_weights: tuple = (1.0, 1.0)
    quad_bump: int = 0
    singular_point: Optional[tuple] = None
    linear: bool = False
    exact_energy_fn: Optional[Callable] = field(default=None, repr=False)
    initial_mesh: Optional[Callable] = field(default=None, repr=False)
    params: dict = field(default_factory=dict)

    @property
    def has_exact(self):
        return self.exact is not None

    @cached_property
    def exact_energy(self):
        """E(u*) from a closed form or an accurate polar-coordinate integration."""
        if self.exact_energy_fn is None:
            return None
        return float(self.exact_energy_fn(self))


# ----------------------------------------------------------------------
# example 1: -eps u'' + u = 1 on (0, 1), u(0) = u(1) = 0


def ex1_exact(x, eps):
    c = 1.0 / np.sqrt(eps)
    x = np.asarray(x, dtype=float)[..., 0]
    return 1.0 - (np.exp(c * (x - 1)) + np.exp(-c * x)) / (1.0 + np.exp(-c))


def ex1_exact_grad(x, eps):
    c = 1.0 / np.sqrt(eps)
    x = np.asarray(x, dtype=float)[..., 0]
    return (-(c * np.exp(c * (x - 1)) - c * np.exp(-c * x)) / (1.0 + np.exp(-c)))[..., None]


def ex1_exact_energy(eps):
    """E(u*) = -1/2 int u* = -1/2 (1 - 2 sqrt(eps) tanh(1 / (2 sqrt(eps))))."""
    c = 1.0 / np.sqrt(eps)
    return -0.5 * (1.0 - 2.0 / c * np.tanh(0.5 * c))


def example1(eps=1e-5):
    return ProblemDef(
        name="ex1",
        dim=1,
        mu=lambda xi: 0.5 * eps * np.sum(xi * xi, axis=-1),
        dmu=lambda xi: eps * xi,
        d2mu=lambda xi: eps * np.broadcast_to(np.eye(xi.shape[-1]), xi.shape + (xi.shape[-1],)),
        g=lambda eta: 0.5 * eta * eta,
        dg=lambda eta: eta,
        d2g=_one,
        f=lambda x: np.ones(np.shape(x)[:-1]),
        dirichlet=lambda x: np.zeros(np.shape(x)[:-1]),
        exact=lambda x: ex1_exact(x, eps),
        exact_grad=lambda x: ex1_exact_grad(x, eps),
        norm_exponent=2.0,
        energy_norm_weights=(eps, 1.0),
        quad_bump=0,
        linear=True,
        exact_energy_fn=lambda prob: ex1_exact_energy(eps),
        initial_mesh=lambda: interval_mesh(4),
        params={"eps": eps},
    )


# ----------------------------------------------------------------------
# example 2: -div((1 + exp(-|grad u|^2)) grad u) = f on the L-shape


def _polar(x):
    x = np.asarray(x, dtype=float)
    r = np.hypot(x[..., 0], x[..., 1])
    phi = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * np.pi)
    return r, phi


def ex2_exact(x):
    r, phi = _polar(x)
    return r ** (2.0 / 3.0) * np.sin(2.0 * phi / 3.0)


def ex2_exact_grad(x):
    r, phi = _polar(x)
    c = 2.0 / 3.0 * r ** (-1.0 / 3.0)
    return np.stack([-c * np.sin(phi / 3.0), c * np.cos(phi / 3.0)], axis=-1)


def ex2_load(x):
    r, phi = _polar(x)
    return -16.0 / 81.0 * r ** -2.0 * np.exp(-4.0 / 9.0 * r ** (-2.0 / 3.0)) * np.sin(2.0 * phi / 3.0)


def _ex2_mu(xi):
    s = np.sum(xi * xi, axis=-1)
    return 0.5 * (s - np.exp(-s))


def _ex2_dmu(xi):
    s = np.sum(xi * xi, axis=-1)
    return (1.0 + np.exp(-s))[..., None] * xi


def _ex2_d2mu(xi):
    s = np.sum(xi * xi, axis=-1)
    e = np.exp(-s)
    eye = np.eye(xi.shape[-1])
    return (1.0 + e)[..., None, None] * eye - 2.0 * e[..., None, None] * xi[..., :, None] * xi[..., None, :]


# polar sectors (phi_a, phi_b, R(phi)) with the origin as apex
_LSHAPE_SECTORS = [
    (0.0, np.pi / 4, lambda p: 1.0 / np.cos(p)),
    (np.pi / 4, 3 * np.pi / 4, lambda p: 1.0 / np.sin(p)),
    (3 * np.pi / 4, 5 * np.pi / 4, lambda p: -1.0 / np.cos(p)),
    (5 * np.pi / 4, 3 * np.pi / 2, lambda p: -1.0 / np.sin(p)),
]
_SQUARE_SECTORS = [
    (0.0, np.pi / 4, lambda p: 1.0 / np.cos(p)),
    (np.pi / 4, np.pi / 2, lambda p: 1.0 / np.sin(p)),
]


def polar_energy(prob, sectors):
    """int mu(grad u*) + g(u*) - f u* over sectors, with r = t^3 to smooth the apex."""

    def density(r, phi):
        x = np.array([[r * np.cos(phi), r * np.sin(phi)]])
        u = prob.exact(x)
        return float((prob.mu(prob.exact_grad(x)) + prob.g(u) - prob.f(x) * u)[0])

    total = 0.0
    for a, b, R in sectors:
        def inner(phi):
            tmax = R(phi) ** (1.0 / 3.0)
            val, _ = integrate.quad(lambda t: density(t ** 3, phi) * 3 * t ** 5, 0.0, tmax,
                                    epsabs=1e-14, epsrel=1e-13, limit=200)
            return val
        val, _ = integrate.quad(inner, a, b, epsabs=1e-13, epsrel=1e-13, limit=200)
        total += val
    return total


def example2():
    return ProblemDef(
        name="ex2",
        dim=2,
        mu=_ex2_mu,
        dmu=_ex2_dmu,
        d2mu=_ex2_d2mu,
        f=ex2_load,
        dirichlet=ex2_exact,
        exact=ex2_exact,
        exact_grad=ex2_exact_grad,
        norm_exponent=2.0,
        energy_norm_weights=(1.0, 1.0),
        quad_bump=4,
        singular_point=(0.0, 0.0),
        exact_energy_fn=lambda prob: polar_energy(prob, _LSHAPE_SECTORS),
        initial_mesh=lshape_mesh,
    )


# ----------------------------------------------------------------------
# example 3: p-Laplacian, mu = |xi|^p / p, exact u = r^alpha on (0, 1)^2

PLAP_DELTA = 1e-10


def example3(p=3.0, alpha=0.75):
    def mu(xi):
        return np.sum(xi * xi, axis=-1) ** (p / 2) / p

    def dmu(xi):
        n = np.sqrt(np.sum(xi * xi, axis=-1))
        return (n ** (p - 2))[..., None] * xi

    def d2mu(xi):
        # |xi| regularised by delta so the Hessian stays invertible at xi = 0
        n = np.sqrt(np.sum(xi * xi, axis=-1) + PLAP_DELTA ** 2)
        eye = np.eye(xi.shape[-1])
        return (n ** (p - 2))[..., None, None] * eye \
            + ((p - 2) * n ** (p - 4))[..., None, None] * xi[..., :, None] * xi[..., None, :]

    def exact(x):
        r, _ = _polar(x)
        return r ** alpha

    def exact_grad(x):
        x = np.asarray(x, dtype=float)
        r, _ = _polar(x)
        return (alpha * r ** (alpha - 2))[..., None] * x

    def load(x):
        # -div(|grad u|^(p-2) grad u) for u = r^alpha in polar coordinates
        r, _ = _polar(x)
        e = (alpha - 1) * (p - 1)
        return -(alpha ** (p - 1)) * (e + 1) * r ** (e - 1)

    return ProblemDef(
        name="ex3",
        dim=2,
        mu=mu,
        dmu=dmu,
        d2mu=d2mu,
        f=load,
        dirichlet=exact,
        exact=exact,
        exact_grad=exact_grad,
        norm_exponent=p,
        energy_norm_weights=(1.0, 1.0),
        quad_bump=4,
        singular_point=(0.0, 0.0),
        exact_energy_fn=lambda prob: polar_energy(prob, _SQUARE_SECTORS),
        initial_mesh=lambda: square_mesh(2),
        params={"p": p, "alpha": alpha},
    )


BUILTIN = {"ex1": example1, "ex2": example2, "ex3": example3}


def builtin_problem(name, **kwargs):
    try:
        factory = BUILTIN[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(BUILTIN)}") from None
    return factory(**kwargs)
