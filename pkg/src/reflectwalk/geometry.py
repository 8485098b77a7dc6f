"""Bounded smooth domains described implicitly.

Sign convention: ``signed_distance`` is positive inside the domain, zero on
the boundary and negative outside. Normals always point into the domain.
All functions accept points of shape ``(d,)`` or batches of shape ``(n, d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ModelError, NumericError, ProjectionAmbiguityError, UsageError

__all__ = [
    "Domain",
    "Ball",
    "Torus",
    "ImplicitDomain",
    "BoundaryContact",
    "signed_distance",
    "project_to_boundary",
    "oblique_project",
    "domain_from_config",
    "snap_into",
]

_TINY = 1e-300


def _norm(v):
    return np.sqrt(np.einsum("...i,...i->...", v, v))


@dataclass
class BoundaryContact:
    """Result of projecting exterior points onto the boundary.

    ``x_pi = x + r * direction`` where ``x`` is the queried point; ``nu`` is the
    inward normal at ``x_pi``. For normal projection ``direction`` is ``nu``.
    """

    x_pi: np.ndarray
    r: np.ndarray
    nu: np.ndarray
    direction: np.ndarray


class Domain:
    """Interface for a bounded domain with a smooth boundary."""

    dim: int

    def signed_distance(self, x):
        raise NotImplementedError

    def contains(self, x):
        """Closed-domain membership test."""
        return self.signed_distance(x) >= 0.0

    def inward_normal(self, z):
        raise NotImplementedError

    def nearest_boundary_point(self, x):
        """Closest boundary point, distance and inward normal there."""
        raise NotImplementedError

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1:] != (self.dim,):
            raise UsageError(f"expected points of dimension {self.dim}, got shape {x.shape}")
        return x


@dataclass(frozen=True)
class Ball(Domain):
    """Euclidean ball ``|x - center| < radius``."""

    radius: float
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise UsageError(f"radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "_c", np.asarray(self.center, dtype=np.float64))

    @property
    def dim(self):
        return len(self.center)

    def signed_distance(self, x):
        x = self._check(x)
        return self.radius - _norm(x - self._c)

    def contains(self, x):
        v = np.asarray(x, dtype=np.float64) - self._c
        return np.einsum("...i,...i->...", v, v) <= self.radius * self.radius

    def inward_normal(self, z):
        v = self._check(z) - self._c
        return -v / np.maximum(_norm(v), _TINY)[..., None]

    def nearest_boundary_point(self, x):
        v = self._check(x) - self._c
        rho = _norm(v)
        u = v / np.maximum(rho, _TINY)[..., None]
        return self._c + self.radius * u, np.abs(rho - self.radius), -u


@dataclass(frozen=True)
class Torus(Domain):
    """Solid torus ``(sqrt(x1^2 + x2^2) - major)^2 + x3^2 < minor^2`` around the x3-axis."""

    major: float
    minor: float

    def __post_init__(self):
        if not (0 < self.minor < self.major):
            raise UsageError(f"torus needs 0 < minor < major, got minor={self.minor}, major={self.major}")

    dim = 3

    def _tube_offset(self, x):
        x = self._check(x)
        rho = np.hypot(x[..., 0], x[..., 1])
        safe = np.maximum(rho, _TINY)
        core = np.stack([self.major * x[..., 0] / safe, self.major * x[..., 1] / safe,
                         np.zeros_like(rho)], axis=-1)
        return core, x - core

    def signed_distance(self, x):
        x = self._check(x)
        rho = np.hypot(x[..., 0], x[..., 1])
        return self.minor - np.hypot(rho - self.major, x[..., 2])

    def contains(self, x):
        x = np.asarray(x, dtype=np.float64)
        rho = np.hypot(x[..., 0], x[..., 1])
        q = rho - self.major
        return q * q + x[..., 2] * x[..., 2] <= self.minor * self.minor

    def inward_normal(self, z):
        _, w = self._tube_offset(z)
        return -w / np.maximum(_norm(w), _TINY)[..., None]

    def nearest_boundary_point(self, x):
        core, w = self._tube_offset(x)
        dist = _norm(w)
        u = w / np.maximum(dist, _TINY)[..., None]
        return core + self.minor * u, np.abs(dist - self.minor), -u


class ImplicitDomain(Domain):
    """Domain ``{f(x) > 0}`` given by a smooth level-set function.

    Parameters
    ----------
    level_set : callable
        ``f(x)`` for points of shape ``(..., d)``; positive inside.
    gradient : callable
        ``grad f(x)``, same batching, shape ``(..., d)``.
    dim : int
    tol : float
        Convergence tolerance of the closest-point iteration.
    max_iter : int
    """

    def __init__(self, level_set, gradient, dim, tol=1e-12, max_iter=50):
        self.level_set = level_set
        self.gradient = gradient
        self.dim = int(dim)
        self.tol = tol
        self.max_iter = max_iter

    def contains(self, x):
        return self.level_set(np.asarray(x, dtype=np.float64)) >= 0.0

    def inward_normal(self, z):
        g = self.gradient(self._check(z))
        return g / np.maximum(_norm(g), _TINY)[..., None]

    def _newton_to_surface(self, y, steps=8):
        for _ in range(steps):
            f = self.level_set(y)
            g = self.gradient(y)
            y = y - (f / np.maximum(np.einsum("...i,...i->...", g, g), _TINY))[..., None] * g
        return y

    def nearest_boundary_point(self, x):
        x = self._check(x)
        z = self._newton_to_surface(x)
        for _ in range(self.max_iter):
            n = self.inward_normal(z)
            # slide along the tangent plane towards x, then return to the surface
            y = x - np.einsum("...i,...i->...", x - z, n)[..., None] * n
            z_new = self._newton_to_surface(y)
            step = np.max(_norm(z_new - z)) if z.size else 0.0
            z = z_new
            if step <= self.tol:
                break
        else:
            raise NumericError(f"closest-point iteration did not converge in {self.max_iter} steps",
                               residual=float(step))
        return z, _norm(x - z), self.inward_normal(z)

    def signed_distance(self, x):
        x = self._check(x)
        _, dist, _ = self.nearest_boundary_point(x)
        return np.where(self.level_set(x) >= 0.0, dist, -dist)


def signed_distance(domain, x):
    """Signed distance to the boundary, positive inside."""
    return domain.signed_distance(x)


def project_to_boundary(domain, x, reach=math.inf):
    """Nearest boundary point of exterior points ``x``.

    Raises
    ------
    UsageError
        If some point lies in the closed domain.
    ProjectionAmbiguityError
        If some point is farther than ``reach`` from the boundary.
    """
    x = domain._check(x)
    if np.any(domain.contains(x)):
        raise UsageError("project_to_boundary expects points outside the closed domain")
    x_pi, r, nu = domain.nearest_boundary_point(x)
    worst = float(np.max(r))
    if worst > reach:
        raise ProjectionAmbiguityError(
            f"point lies {worst:.6g} outside the domain, beyond the reach {reach:.6g}; "
            "reduce the step size")
    return BoundaryContact(x_pi=x_pi, r=r, nu=nu, direction=nu)


def _ray_exit(domain, x, e, r0, tol, max_iter=60):
    """Solve ``signed_distance(x + r e) = 0`` for r by Newton's method."""
    r = r0.copy()
    for _ in range(max_iter):
        p = x + r[..., None] * e
        s = domain.signed_distance(p)
        slope = np.einsum("...i,...i->...", domain.inward_normal(p), e)
        dr = -s / np.where(np.abs(slope) > _TINY, slope, _TINY)
        r = r + dr
        if np.all(np.abs(dr) <= tol):
            break
    return r


def oblique_project(domain, eta, x, tol=1e-13, max_iter=200, damping=1.0):
    """Projection of exterior points onto the boundary along a direction field.

    Solves ``x_pi = x + r * eta(x_pi)`` with ``x_pi`` on the boundary by a damped
    fixed-point iteration on the direction, started from the normal projection.

    Parameters
    ----------
    eta : callable
        Unit inward direction field on the boundary, ``eta(z) -> (..., d)``.
    tol : float
        Convergence threshold on the change of ``x_pi``.
    damping : float in (0, 1]
        Relaxation weight for the direction update.
    """
    x = domain._check(x)
    if np.any(domain.contains(x)):
        raise UsageError("oblique_project expects points outside the closed domain")
    z, r, nu = domain.nearest_boundary_point(x)
    e = eta(z)
    _check_oblique(e, nu)
    if float(np.max(_norm(e - nu))) <= tol:
        # eta is the normal field up to rounding: the normal projection solves the equation
        return BoundaryContact(x_pi=z, r=r, nu=nu, direction=nu)
    residual = float(np.max(_norm(x + r[..., None] * e - z)))
    if residual <= tol:
        return BoundaryContact(x_pi=z, r=r, nu=nu, direction=e)
    for _ in range(max_iter):
        r = _ray_exit(domain, x, e, r, tol)
        z_new = x + r[..., None] * e
        step = float(np.max(_norm(z_new - z)))
        z = z_new
        nu = domain.inward_normal(z)
        e_new = eta(z)
        _check_oblique(e_new, nu)
        if step <= tol:
            residual = float(np.max(_norm(x + r[..., None] * e_new - z)))
            if residual <= max(tol, 1e-12):
                return BoundaryContact(x_pi=z, r=r, nu=nu, direction=e_new)
        mixed = (1.0 - damping) * e + damping * e_new
        e = mixed / _norm(mixed)[..., None]
    residual = float(np.max(_norm(x + r[..., None] * eta(z) - z)))
    raise NumericError(f"oblique projection did not converge in {max_iter} iterations "
                       f"(residual {residual:.3e})", residual=residual)


def _check_oblique(e, nu):
    if np.any(np.einsum("...i,...i->...", e, nu) <= 0.0):
        raise ModelError("direction field is not inward-oblique (eta . nu <= 0)")


def domain_from_config(cfg):
    """Build a domain from a mapping like ``{"kind": "ball", "radius": 2.0, "center": [0, 0]}``."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    try:
        if kind == "ball":
            dom = Ball(radius=float(cfg.pop("radius")), center=tuple(cfg.pop("center", (0.0, 0.0))))
        elif kind == "torus3d":
            dom = Torus(major=float(cfg.pop("major")), minor=float(cfg.pop("minor")))
        else:
            raise UsageError(f"unknown domain kind {kind!r}; expected 'ball' or 'torus3d'")
    except KeyError as exc:
        raise UsageError(f"domain of kind {kind!r} is missing {exc.args[0]!r}") from None
    if cfg:
        raise UsageError(f"unknown domain keys: {sorted(cfg)}")
    return dom


def snap_into(domain, x, tol=1e-10):
    """Return ``x`` with points at most ``tol`` outside moved to the nearest boundary point.

    Points given exactly on a curved boundary are often a rounding error
    outside; anything farther out raises UsageError.
    """
    x = domain._check(x)
    batch = np.atleast_2d(x).copy()
    out = ~domain.contains(batch)
    if np.any(out):
        z, dist, _ = domain.nearest_boundary_point(batch[out])
        if float(np.max(dist)) > tol:
            raise UsageError(f"point {batch[out][np.argmax(dist)].tolist()} lies outside the domain")
        batch[out] = z
        still = ~domain.contains(batch)
        if np.any(still):
            # nudge inwards by a few ulps when the projected point still rounds outside
            _, _, nu = domain.nearest_boundary_point(batch[still])
            batch[still] = batch[still] + 1e-14 * nu
    return batch if x.ndim > 1 else batch[0]
