import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflectwalk.errors import ModelError, ProjectionAmbiguityError, UsageError
from reflectwalk.geometry import (Ball, ImplicitDomain, Torus, domain_from_config, oblique_project,
                                  project_to_boundary, signed_distance, snap_into)


def implicit_ball(R, d):
    return ImplicitDomain(lambda x: R * R - np.sum(x * x, axis=-1), lambda x: -2.0 * x, d)


def implicit_torus(R, r):
    def f(x):
        rho = np.hypot(x[..., 0], x[..., 1])
        return r * r - (rho - R) ** 2 - x[..., 2] ** 2

    def grad(x):
        rho = np.maximum(np.hypot(x[..., 0], x[..., 1]), 1e-300)
        k = -2.0 * (rho - R) / rho
        return np.stack([k * x[..., 0], k * x[..., 1], -2.0 * x[..., 2]], axis=-1)

    return ImplicitDomain(f, grad, 3)


def exterior_points(rng, domain, n, lo, hi):
    # points at distance in [lo, hi] outside: boundary point minus that distance along the normal
    if isinstance(domain, Ball):
        u = rng.normal(size=(n, domain.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        return np.asarray(domain.center) + (domain.radius + rng.uniform(lo, hi, n))[:, None] * u
    phi, th = rng.uniform(0, 2 * math.pi, (2, n))
    rad = domain.minor + rng.uniform(lo, hi, n)
    rho = domain.major + rad * np.cos(th)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), rad * np.sin(th)], axis=1)


def test_signed_distance_examples():
    assert signed_distance(Ball(2.0), [0.0, 0.0]) == 2.0
    assert signed_distance(Ball(2.0), [2.0, 0.0]) == 0.0
    assert signed_distance(Torus(4.0, 2.0), [6.5, 0.0, 0.0]) == pytest.approx(-0.5, abs=1e-15)
    with pytest.raises(UsageError):
        signed_distance(Ball(2.0), [1.0, 0.0, 0.0])


@pytest.mark.parametrize("domain, x, x_pi, r, nu", [
    (Ball(2.0), [2.1, 0.0], [2.0, 0.0], 0.1, [-1.0, 0.0]),
    (Ball(1.0, (0, 0, 0)), [0.0, 0.0, 1.1], [0.0, 0.0, 1.0], 0.1, [0.0, 0.0, -1.0]),
    (Torus(4.0, 2.0), [6.5, 0.0, 0.0], [6.0, 0.0, 0.0], 0.5, [-1.0, 0.0, 0.0]),
])
def test_projection_examples(domain, x, x_pi, r, nu):
    c = project_to_boundary(domain, np.array([x]), reach=1.0)
    np.testing.assert_allclose(c.x_pi[0], x_pi, atol=1e-12)
    assert c.r[0] == pytest.approx(r, abs=1e-12)
    np.testing.assert_allclose(c.nu[0], nu, atol=1e-12)
    np.testing.assert_array_equal(c.direction, c.nu)


def test_projection_errors():
    with pytest.raises(ProjectionAmbiguityError):
        project_to_boundary(Ball(2.0), np.array([[3.0, 0.0]]), reach=0.5)
    with pytest.raises(UsageError):
        project_to_boundary(Ball(2.0), np.array([[1.9, 0.0]]))


@pytest.mark.parametrize("domain, generic", [
    (Ball(2.0), implicit_ball(2.0, 2)),
    (Ball(1.0, (0, 0, 0)), implicit_ball(1.0, 3)),
    (Torus(4.0, 2.0), implicit_torus(4.0, 2.0)),
])
def test_analytic_matches_generic_projection(domain, generic):
    x = exterior_points(np.random.default_rng(0), domain, 1000, 1e-6, 0.5)
    a = project_to_boundary(domain, x, reach=1.0)
    g = project_to_boundary(generic, x, reach=1.0)
    assert np.max(np.abs(a.x_pi - g.x_pi)) <= 1e-10
    assert np.max(np.abs(a.r - g.r)) <= 1e-10
    assert np.max(np.abs(a.nu - g.nu)) <= 1e-10


@pytest.mark.parametrize("domain", [Ball(2.0), Ball(1.0, (0, 0, 0)), Torus(4.0, 2.0)])
def test_contact_invariants(domain):
    x = exterior_points(np.random.default_rng(1), domain, 500, 1e-8, 0.7)
    c = project_to_boundary(domain, x)
    assert np.max(np.abs(domain.signed_distance(c.x_pi))) <= 1e-10
    assert np.max(np.abs(np.linalg.norm(c.nu, axis=1) - 1.0)) <= 1e-12
    np.testing.assert_allclose(x + c.r[:, None] * c.direction, c.x_pi, atol=1e-12)
    # mirror point is inside and at distance r from the contact
    y = x + 2.0 * c.r[:, None] * c.nu
    assert np.all(domain.signed_distance(y) >= -1e-10)
    np.testing.assert_allclose(np.linalg.norm(y - c.x_pi, axis=1), c.r, atol=1e-10)


@settings(max_examples=200)
@given(st.floats(0, 2 * math.pi), st.floats(1e-9, 1e-3))
def test_projection_idempotence(angle, eps):
    dom = Ball(2.0)
    z = dom.radius * np.array([[math.cos(angle), math.sin(angle)]])
    c0 = project_to_boundary(dom, z * (1 + 1e-3))
    c1 = project_to_boundary(dom, c0.x_pi - eps * c0.nu)
    np.testing.assert_allclose(c1.x_pi, c0.x_pi, atol=1e-9)


def test_oblique_with_normal_field_equals_normal_projection():
    for dom in (Ball(2.0), Torus(4.0, 2.0)):
        x = exterior_points(np.random.default_rng(2), dom, 200, 1e-6, 0.4)
        c = project_to_boundary(dom, x)
        o = oblique_project(dom, dom.inward_normal, x)
        np.testing.assert_array_equal(o.x_pi, c.x_pi)
        np.testing.assert_array_equal(o.r, c.r)


def test_oblique_residual():
    def eta(z):
        v = -z / 2.0 + np.array([0.0, 0.5])
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    x = np.array([[2.1, 0.0]])
    c = oblique_project(Ball(2.0), eta, x)
    assert np.max(np.abs(c.x_pi - x - c.r[:, None] * eta(c.x_pi))) <= 1e-12
    assert abs(Ball(2.0).signed_distance(c.x_pi)[0]) <= 1e-10
    with pytest.raises(UsageError):
        oblique_project(Ball(2.0), eta, np.array([[1.9, 0.0]]))


def test_oblique_rejects_outward_field():
    with pytest.raises(ModelError):
        oblique_project(Ball(2.0), lambda z: z / np.linalg.norm(z, axis=-1, keepdims=True),
                        np.array([[2.1, 0.0]]))


def test_domain_from_config():
    assert domain_from_config({"kind": "ball", "radius": 2.0, "center": [0, 0]}) == Ball(2.0)
    assert domain_from_config({"kind": "torus3d", "major": 4, "minor": 2}) == Torus(4.0, 2.0)
    with pytest.raises(UsageError):
        domain_from_config({"kind": "cube"})
    with pytest.raises(UsageError):
        domain_from_config({"kind": "ball"})
    with pytest.raises(UsageError):
        Torus(2.0, 3.0)


def test_snap_into():
    p = snap_into(Ball(2.0), [math.sqrt(2.0), math.sqrt(2.0)])
    assert Ball(2.0).contains(p)
    with pytest.raises(UsageError):
        snap_into(Ball(2.0), [2.1, 0.0])
