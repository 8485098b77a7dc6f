"""One-step transition kernels for reflected diffusions.

All kernels act on batches: ``X`` has shape ``(n, d)`` and every trajectory in
the batch shares the current time ``t``. The first-order kernels use the weak
Euler predictor with symmetric ±1 noise followed by symmetrized reflection
through the nearest boundary point.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericError, ProjectionAmbiguityError, UsageError
from .geometry import BoundaryContact, oblique_project, project_to_boundary, snap_into
from .montecarlo import three_point

__all__ = [
    "ChainState",
    "StepEvent",
    "euler_predict",
    "reflect",
    "step_x",
    "step_chain",
    "step_poisson",
    "step_oblique",
    "second_order_increment",
    "run_second_order",
    "MAX_BOUNCES",
]

# a predictor farther out than twice the local width of the domain is still
# outside after one mirror step; it is mirrored again up to this many times
MAX_BOUNCES = 16
_ROUNDING = 1e-12


@dataclass
class ChainState:
    """Batch of chain states ``(t, X, Y, Z)``; ``Y`` starts at 1 and ``Z`` at 0."""

    t: float
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray

    @classmethod
    def start(cls, t0, x0, n):
        x0 = np.asarray(x0, dtype=np.float64)
        X = np.broadcast_to(x0, (n, x0.shape[-1])).copy()
        return cls(float(t0), X, np.ones(n), np.zeros(n))

    def copy(self):
        return ChainState(self.t, self.X.copy(), self.Y.copy(), self.Z.copy())


@dataclass
class StepEvent:
    """What happened to each trajectory of a batch during one step.

    ``reflected[i]`` is True iff the predictor ``x_predict[i]`` left the closed
    domain. ``r`` is the distance from the predictor to its boundary contact
    (zero for interior steps); ``contact`` holds the contact data of the
    reflected rows only, in the order given by ``index``.
    """

    reflected: np.ndarray
    x_predict: np.ndarray
    r: np.ndarray
    h_used: float = math.nan
    contact: Optional[BoundaryContact] = None
    index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    bounces: int = 0

    @property
    def kind(self):
        """Per-row labels ``"interior"`` or ``"reflected"``."""
        return np.where(self.reflected, "reflected", "interior")

    @property
    def any_reflected(self):
        return self.index.size > 0


def euler_predict(problem, t, X, h, xi):
    """Weak Euler predictor ``X + h b(t, X) + sqrt(h) sigma(t, X) xi``."""
    X = np.asarray(X, dtype=np.float64)
    return X + h * problem.b(t, X) + math.sqrt(h) * problem.noise(t, X, xi)


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def reflect(domain, x_predict, reach=math.inf, h=math.nan):
    """Mirror predictors that left the domain through their nearest boundary point.

    Returns ``(x_next, event)``. Interior predictors are returned unchanged;
    exterior ones become ``x' + 2 r nu(x_pi)``. Accepts a single point or a batch.
    """
    x, single = _as_batch(x_predict)
    n = x.shape[0]
    outside = ~domain.contains(x)
    r = np.zeros(n)
    x_next = x.copy()
    contact = None
    idx = np.flatnonzero(outside)
    bounces = 0
    if idx.size:
        xo = x[idx]
        contact = project_to_boundary(domain, xo, reach)
        xn = xo + (2.0 * contact.r)[:, None] * contact.nu
        r[idx] = contact.r
        xn, bounces = _settle(domain, xn)
        x_next[idx] = xn
    event = StepEvent(reflected=outside, x_predict=x, r=r, h_used=h, contact=contact,
                      index=idx, bounces=bounces)
    if single:
        return x_next[0], event
    return x_next, event


def _settle(domain, xn):
    # only reachable with unbounded drift or rounding; the event keeps the first contact
    bounces = 0
    while True:
        still = ~domain.contains(xn)
        if not np.any(still):
            return xn, bounces
        k = np.flatnonzero(still)
        c = project_to_boundary(domain, xn[k])
        # a mirror image landing on the boundary can round to just outside; mirroring
        # again would not move it, so it is snapped onto the boundary instead
        tiny = c.r <= _ROUNDING
        if np.any(tiny):
            xn[k[tiny]] = snap_into(domain, xn[k[tiny]], tol=_ROUNDING)
        if np.any(~tiny):
            bounces += 1
            if bounces > MAX_BOUNCES:
                raise NumericError(f"reflected point still outside the domain after {MAX_BOUNCES} mirror steps")
            far = k[~tiny]
            xn[far] = xn[far] + (2.0 * c.r[~tiny])[:, None] * c.nu[~tiny]


def step_x(problem, t, X, h, xi, reach=None):
    """Position-only step of the normally reflected Euler chain."""
    if reach is None:
        reach = problem.default_reach(h)
    return reflect(problem.domain, euler_predict(problem, t, X, h, xi), reach, h)


def step_chain(problem, state, h, xi, reach=None):
    """Advance ``(t, X, Y, Z)`` by one step of the Robin chain.

    Interior rows get ``Y += h c Y`` and ``Z += h g Y`` with ``c, g`` at
    ``(t_k, X_k)``. Reflected rows additionally pick up the boundary terms
    ``2r gamma Y + 2r^2 gamma^2 Y`` and ``-2r psi Y - 2r^2 psi gamma Y`` with
    ``gamma, psi`` evaluated at ``(t_{k+1}, x_pi)``.
    """
    if not h > 0:
        raise UsageError(f"step size must be positive, got {h}")
    t, X, Y, Z = state.t, state.X, state.Y, state.Z
    c = problem.eval_scalar("c", t, X)
    g = problem.eval_scalar("g", t, X)
    x_next, event = step_x(problem, t, X, h, xi, reach)
    Y_new = Y + h * c * Y
    Z_new = Z + h * g * Y
    if event.any_reflected:
        k = event.index
        t1 = t + h
        z = event.contact.x_pi
        r = event.contact.r
        gam = problem.eval_scalar("gamma", t1, z)
        psi = problem.eval_scalar("psi", t1, z)
        Yk = Y[k]
        Y_new[k] += 2.0 * r * gam * Yk + 2.0 * r * r * gam * gam * Yk
        Z_new[k] += -2.0 * r * psi * Yk - 2.0 * r * r * psi * gam * Yk
    return ChainState(t + h, x_next, Y_new, Z_new), event


def step_poisson(problem, state, h, xi, reach=None):
    """Neumann-Poisson variant: ``Z -= h phi1(X_k)``, and ``Z -= 2r phi2(x_pi)`` on reflection.

    ``Y`` is left untouched.
    """
    if not h > 0:
        raise UsageError(f"step size must be positive, got {h}")
    phi1 = problem.eval_scalar("phi1", state.t, state.X)
    x_next, event = step_x(problem, state.t, state.X, h, xi, reach)
    Z_new = state.Z - h * phi1
    if event.any_reflected:
        Z_new[event.index] -= 2.0 * event.contact.r * problem.eval_scalar("phi2", state.t + h, event.contact.x_pi)
    return ChainState(state.t + h, x_next, state.Y, Z_new), event


def step_oblique(problem, eta_field, state, h, xi, reach=None):
    """Euler step with reflection along an inward oblique field ``eta``.

    Exterior predictors are mapped to ``x' + 2 r eta(x_pi)`` where
    ``x_pi = x' + r eta(x_pi)`` lies on the boundary. Only ``X`` changes.
    """
    if not h > 0:
        raise UsageError(f"step size must be positive, got {h}")
    if reach is None:
        reach = problem.default_reach(h)
    domain = problem.domain
    xp = euler_predict(problem, state.t, state.X, h, xi)
    outside = ~domain.contains(xp)
    idx = np.flatnonzero(outside)
    r = np.zeros(xp.shape[0])
    x_next = xp.copy()
    contact = None
    if idx.size:
        xo = xp[idx]
        contact = oblique_project(domain, eta_field, xo)
        if float(np.max(contact.r)) > reach:
            raise ProjectionAmbiguityError(
                f"predictor lies {float(np.max(contact.r)):.6g} outside along eta, beyond the reach {reach:.6g}")
        xn = xo + (2.0 * contact.r)[:, None] * contact.direction
        out = ~domain.contains(xn)
        if np.any(out):
            # same rounding treatment as the normal reflection, anything farther out is an error
            if float(np.max(domain.nearest_boundary_point(xn[out])[1])) > _ROUNDING:
                raise NumericError("oblique reflection left the point outside the domain; reduce the step size")
            xn[out] = snap_into(domain, xn[out], tol=_ROUNDING)
        x_next[idx] = xn
        r[idx] = contact.r
    event = StepEvent(reflected=outside, x_predict=xp, r=r, h_used=h, contact=contact, index=idx)
    return ChainState(state.t + h, x_next, state.Y, state.Z), event


# -- second-order scheme ---------------------------------------------------------------

def _require_second_order(problem):
    if not problem.constant_sigma:
        raise UsageError("the second-order scheme needs a constant diffusion matrix")
    if problem.drift_jacobian is None or problem.drift_generator is None:
        raise UsageError("the second-order scheme needs drift_jacobian and drift_generator")


def _increment_parts(problem, tau, X, theta):
    """Split ``delta = A + B xi`` for the order-two weak Taylor step."""
    s = np.asarray(problem.sigma, dtype=np.float64)
    b = problem.b(tau, X)
    J = problem.drift_jacobian(tau, X)
    G = problem.drift_generator(tau, X)
    th = np.asarray(theta, dtype=np.float64)[..., None]
    A = th * b + 0.5 * th * th * G
    Js = J @ s
    B = np.sqrt(th)[..., None] * s + 0.5 * (th ** 1.5)[..., None] * Js
    return A, B


def second_order_increment(problem, tau, X, theta, xi):
    """``sqrt(th) s xi + th b + th^1.5/2 (grad b) s xi + th^2/2 (d_t + L) b`` for constant ``s``."""
    _require_second_order(problem)
    A, B = _increment_parts(problem, tau, X, theta)
    return A + np.einsum("nij,nj->ni", B, xi)


def _support(d):
    v = (0.0, math.sqrt(3.0), -math.sqrt(3.0))
    return np.array(list(itertools.product(v, repeat=d)))


def _max_excess(domain, X, A, B, support):
    # largest distance outside the domain over all realizations of the increment
    pts = X[:, None, :] + A[:, None, :]
    for j in range(X.shape[1]):
        pts = pts + B[:, None, :, j] * support[None, :, j, None]
    sd = domain.signed_distance(pts.reshape(-1, X.shape[1])).reshape(pts.shape[:2])
    return np.max(-sd, axis=1)


def run_second_order(problem, t0, x, T, h, rng, return_time=False, bisection_steps=30):
    """Second-order weak scheme with random step sizes near the boundary.

    Parameters
    ----------
    x : array, shape ``(d,)`` or ``(n, d)``
    rng : RngStream
        One stream entry per trajectory; draw ``k`` of trajectory ``i`` feeds its k-th step.
    return_time : bool
        Also return the accumulated time of each trajectory.

    Returns
    -------
    X_final, steps[, elapsed]
        Single-point input gives a point and an integer.

    Away from the boundary the step is ``h`` (or the remainder up to ``T``).
    Where some realization of the increment would leave the domain, the step
    ``theta`` is the largest value in ``[h^2, h_k]`` (bisection) keeping every
    realization within ``width`` of the domain; a predictor that still exits is
    mirrored as in the first-order scheme.
    """
    _require_second_order(problem)
    if not h > 0:
        raise UsageError(f"step size must be positive, got {h}")
    domain = problem.domain
    X, single = _as_batch(x)
    X = X.copy()
    n, d = X.shape
    if len(rng) != n:
        raise UsageError(f"rng stream has {len(rng)} trajectories, expected {n}")
    if np.any(~domain.contains(X)):
        raise UsageError("initial points must lie in the closed domain")
    s = np.asarray(problem.sigma, dtype=np.float64)
    s_norm = float(np.linalg.norm(s, 2))
    width = math.sqrt(3.0 * d) * h * s_norm + h * h * (problem.drift_bound if math.isfinite(problem.drift_bound) else 0.0)
    support = _support(d)
    xi_max = math.sqrt(3.0 * d)
    h2 = h * h
    tau = np.full(n, float(t0))
    steps = np.zeros(n, dtype=np.int64)
    active = tau < T - h2
    while np.any(active):
        a = np.flatnonzero(active)
        xi = three_point(rng, d)[a]
        ta, Xa = tau[a], X[a]
        hk = np.where(ta <= T - h, h, T - ta)
        A, B = _increment_parts(problem, ta, Xa, hk)
        # conservative prefilter, then exact enumeration of the 3^d realizations
        reach_bound = np.linalg.norm(A, axis=1) + xi_max * np.linalg.norm(B, axis=(1, 2))
        near = domain.signed_distance(Xa) <= reach_bound
        theta = hk.copy()
        if np.any(near):
            kn = np.flatnonzero(near)
            exc = _max_excess(domain, Xa[kn], A[kn], B[kn], support)
            layer = kn[exc > 0.0]
            if layer.size:
                theta[layer] = _search_theta(problem, domain, ta[layer], Xa[layer], hk[layer],
                                             h2, width, support, bisection_steps)
                A2, B2 = _increment_parts(problem, ta[layer], Xa[layer], theta[layer])
                A[layer], B[layer] = A2, B2
        xp = Xa + A + np.einsum("nij,nj->ni", B, xi)
        xn, _ = reflect(domain, xp)
        X[a] = xn
        tau[a] = ta + theta
        steps[a] += 1
        active = tau < T - h2
    if single:
        out = (X[0], int(steps[0]))
        return out + (float(tau[0] - t0),) if return_time else out
    return (X, steps, tau - t0) if return_time else (X, steps)


def _search_theta(problem, domain, tau, X, hk, h2, width, support, iters):
    lo = np.full(X.shape[0], h2)
    hi = hk.copy()
    A, B = _increment_parts(problem, tau, X, lo)
    bad = _max_excess(domain, X, A, B, support) > width
    if np.any(bad):
        k = np.flatnonzero(bad)[0]
        raise NumericError(f"no admissible step in [h^2, h] at x={X[k].tolist()}: even theta=h^2 "
                           f"exits by more than the layer width {width:.3g}")
    A, B = _increment_parts(problem, tau, X, hi)
    ok_hi = _max_excess(domain, X, A, B, support) <= width
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        A, B = _increment_parts(problem, tau, X, mid)
        ok = _max_excess(domain, X, A, B, support) <= width
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return np.where(ok_hi, hk, lo)
