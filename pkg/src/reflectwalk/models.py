"""Problem definitions and the built-in catalog of reference problems.

Coefficients are plain vectorized callables. Conventions for a batch of
``n`` points in ``d`` dimensions:

* ``t`` is a float or an array of shape ``(n,)``;
* ``drift(t, x)`` returns ``(n, d)``;
* ``sigma`` is either a constant ``(d, d)`` array or ``sigma(t, x) -> (n, d, d)``;
* scalar data ``c, g, gamma, psi`` take ``(t, x)`` and return ``(n,)``;
* ``phi, phi1, phi2`` take ``x`` only.

Unset scalar data are identically zero.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import iv

from .errors import ModelError, UsageError
from .geometry import Ball, Domain, Torus

__all__ = [
    "RsdeProblem",
    "ProblemCatalogEntry",
    "catalog",
    "catalog_names",
    "alpha",
    "gradient_system",
]

Field = Callable[..., np.ndarray]


@dataclass(frozen=True)
class RsdeProblem:
    """Coefficients of a reflected SDE and the PDE data attached to it.

    The backward equation is ``u_t + (b.grad)u + (a:grad grad)u/2 + c u + g = 0``
    with Robin condition ``du/dnu + gamma u = psi`` (``nu`` the inward normal)
    and terminal value ``phi``. ``phi1``/``phi2`` are the volume/boundary data of
    the Neumann-Poisson problem ``A u = phi1``, ``du/dnu = phi2``.

    ``drift_bound`` and ``sigma_bound`` are sup-norms of ``|b|`` and ``||sigma||_2``
    over the closed domain (``inf`` when unbounded); they size the projection
    reach. ``drift_jacobian`` and ``drift_generator`` (``(d_t + L) b``) are only
    needed by the second-order scheme.
    """

    domain: Domain
    drift: Field
    sigma: Union[np.ndarray, Field]
    c: Optional[Field] = None
    g: Optional[Field] = None
    gamma: Optional[Field] = None
    psi: Optional[Field] = None
    phi: Optional[Field] = None
    phi1: Optional[Field] = None
    phi2: Optional[Field] = None
    autonomous: bool = True
    drift_bound: float = math.inf
    sigma_bound: float = math.inf
    drift_jacobian: Optional[Field] = None
    drift_generator: Optional[Field] = None
    name: str = "custom"

    @property
    def d(self):
        return self.domain.dim

    @property
    def constant_sigma(self):
        return not callable(self.sigma)

    def b(self, t, x):
        return self.drift(t, x)

    def sigma_at(self, t, x):
        """Diffusion factor, shape ``(n, d, d)``."""
        if self.constant_sigma:
            s = np.asarray(self.sigma, dtype=np.float64)
            return np.broadcast_to(s, x.shape[:-1] + s.shape)
        return self.sigma(t, x)

    def noise(self, t, x, xi):
        """``sigma(t, x) @ xi`` row by row."""
        if self.constant_sigma:
            return xi @ np.asarray(self.sigma, dtype=np.float64).T
        return np.einsum("nij,nj->ni", self.sigma(t, x), xi)

    def diffusion_matrix(self, t, x):
        s = self.sigma_at(t, x)
        return np.einsum("...ik,...jk->...ij", s, s)

    def eval_scalar(self, name, t, x):
        fn = getattr(self, name)
        if fn is None:
            return np.zeros(x.shape[:-1])
        if name in ("phi", "phi1", "phi2"):
            return fn(x)
        return fn(t, x)

    def predictor_bound(self, h):
        """Upper bound on one Euler displacement ``|h b + sqrt(h) sigma xi|``."""
        return h * self.drift_bound + math.sqrt(h * self.d) * self.sigma_bound

    def default_reach(self, h):
        return 2.0 * self.predictor_bound(h)

    def with_data(self, **kwargs):
        return replace(self, **kwargs)


@dataclass(frozen=True)
class ProblemCatalogEntry:
    """A catalog problem with its reference values and default run settings.

    ``exact`` holds known reference numbers (see each builder for where they
    come from); ``defaults`` holds the starting point and horizon used with them.
    """

    name: str
    problem: RsdeProblem
    exact: dict = field(default_factory=dict)
    defaults: dict = field(default_factory=dict)
    solution: Optional[Callable] = None


def _r2(x):
    return np.einsum("...i,...i->...", x, x)


def _const_matrix_field(m):
    m = np.asarray(m, dtype=np.float64)

    def f(t, x):
        return np.broadcast_to(m, x.shape[:-1] + m.shape)

    return f


# -- rotating parabolic problem with Neumann data on a disk --------------------------

def _exp8_1(radius=4.0, horizon=1.0):
    R, T = float(radius), float(horizon)

    def drift(t, x):
        return np.stack([-x[..., 1], x[..., 0]], axis=-1)

    def g(t, x):
        e = np.exp(-(T - np.asarray(t)))
        return 5.0 * (1.0 + e) - (25.0 - _r2(x)) * e

    def psi(t, z):
        e = np.exp(-(T - np.asarray(t)))
        return np.broadcast_to(2.0 * R * (1.0 + e), z.shape[:-1]).astype(np.float64)

    def phi(x):
        return 2.0 * (25.0 - _r2(x))

    def solution(t, x):
        return (25.0 - _r2(np.asarray(x, dtype=np.float64))) * (1.0 + np.exp(-(T - t)))

    def generator(t, x):
        # (b.grad) b for the rotation field; b is linear and time-independent
        return -np.asarray(x, dtype=np.float64)

    problem = RsdeProblem(
        domain=Ball(R, (0.0, 0.0)), drift=drift, sigma=np.diag([1.0, 2.0]), g=g, psi=psi, phi=phi,
        autonomous=False, drift_bound=R, sigma_bound=2.0,
        drift_jacobian=_const_matrix_field([[0.0, -1.0], [1.0, 0.0]]), drift_generator=generator,
        name="exp8_1")
    return ProblemCatalogEntry(
        name="exp8_1", problem=problem,
        exact={"solution": 34.1970, "solution_closed_form": float(solution(0.0, [0.0, 0.0]))},
        defaults={"t0": 0.0, "x0": (0.0, 0.0), "T": T},
        solution=solution)


# -- Gaussian-type ergodic dynamics on a disk (shared by exp8_2 and exp8_5) ----------

_A_DRIFT = np.array([[0.5, 0.25], [0.25, 0.5]])


def _gauss_drift(t, x):
    return -(x @ _A_DRIFT)


def _gauss_sigma(t, x):
    s = x[..., 0] + x[..., 1]
    return np.stack([
        np.stack([np.sin(s), np.cos(s)], axis=-1),
        np.stack([np.sin(s + math.pi / 3), np.cos(s + math.pi / 3)], axis=-1),
    ], axis=-2)


def _gauss_phi_bar(R):
    q = math.exp(-R * R / 2.0)
    return (2.0 - 2.0 * q - R * R * q) / (1.0 - q)


def _gauss_problem(R, name, **data):
    return RsdeProblem(
        domain=Ball(R, (0.0, 0.0)), drift=_gauss_drift, sigma=_gauss_sigma,
        drift_bound=0.75 * R, sigma_bound=math.sqrt(1.5), name=name, **data)


def _exp8_2(radius=2.0):
    R = float(radius)
    problem = _gauss_problem(R, "exp8_2", phi=_r2)
    return ProblemCatalogEntry(
        name="exp8_2", problem=problem,
        exact={"phi_bar": 1.3739, "phi_bar_closed_form": _gauss_phi_bar(R)},
        defaults={"t0": 0.0, "x0": (0.0, 0.0), "T": 5.0, "T_ergodic": 2.0e4})


def _exp8_5(radius=2.0):
    R = float(radius)

    def phi1(x):
        return 2.0 - _r2(x) - x[..., 0] * x[..., 1]

    def phi2(z):
        # inward normal derivative of |x|^2 on the circle |x| = R
        return np.full(z.shape[:-1], -2.0 * R)

    problem = _gauss_problem(R, "exp8_5", phi1=phi1, phi2=phi2)
    u_bar = _gauss_phi_bar(R)
    x0 = (math.sqrt(2.0), math.sqrt(2.0))
    return ProblemCatalogEntry(
        name="exp8_5", problem=problem,
        exact={"solution_offset": 2.626, "u_bar": 1.374,
               "solution_offset_closed_form": float(_r2(np.array(x0))) - u_bar},
        defaults={"t0": 0.0, "x0": x0, "T": 5.0, "ell": 0.1, "beta": 1.0, "upsilon": 1.0},
        solution=lambda x: _r2(np.asarray(x, dtype=np.float64)))


# -- Fisher distribution on the unit sphere ------------------------------------------

_V_FISHER = np.array([0.5, 0.5, 1.0 / math.sqrt(2.0)])


def _fisher_log_grad(x):
    r2 = np.maximum(_r2(x), 1e-300)
    r = np.sqrt(r2)
    vx = x @ _V_FISHER
    return (_V_FISHER - (vx / r2)[..., None] * x) / r[..., None]


def _fisher_exact():
    mean_resultant = 1.0 / math.tanh(1.0) - 1.0
    return {"kappa": 3.0, "psi_prime": 0.53438,
            "psi_prime_closed_form": float(_V_FISHER.sum()) * mean_resultant}


def _psi_sum(t, z):
    return np.sum(z, axis=-1)


def _exp8_3():
    problem = RsdeProblem(
        domain=Ball(1.0, (0.0, 0.0, 0.0)), drift=lambda t, x: _fisher_log_grad(x),
        sigma=math.sqrt(2.0) * np.eye(3), psi=_psi_sum, sigma_bound=math.sqrt(2.0), name="exp8_3")
    return ProblemCatalogEntry(name="exp8_3", problem=problem, exact=_fisher_exact(),
                               defaults={"t0": 0.0, "x0": (-0.5, -0.5, -0.5), "T": 10.0, "T_ergodic": 3.0e4})


def _fisher3d():
    base = gradient_system(_fisher_log_grad, math.sqrt(2.0), Ball(1.0, (0.0, 0.0, 0.0)), name="fisher3d")
    problem = base.with_data(psi=_psi_sum)
    return ProblemCatalogEntry(name="fisher3d", problem=problem, exact=_fisher_exact(),
                               defaults={"t0": 0.0, "x0": (-0.5, -0.5, -0.5), "T": 10.0, "T_ergodic": 3.0e4})


# -- elliptic problem with decay on a torus -----------------------------------------

def _exp8_4(major=4.0, minor=2.0):
    R, r = float(major), float(minor)

    def drift(t, x):
        return np.stack([-x[..., 2], x[..., 0], x[..., 1]], axis=-1)

    def c(t, x):
        return np.full(x.shape[:-1], -2.0)

    def g(t, x):
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        return (2.0 * x3**3 - 3.0 * x2 * x3**2 + 2.0 * x2**2 - 2.0 * x1 * x2
                + 2.0 * x1 - 5.0 * x3 - 5.0)

    def psi(t, z):
        z1, z2, z3 = z[..., 0], z[..., 1], z[..., 2]
        rho = np.hypot(z1, z2)
        return ((R / rho - 1.0) * (z1 + 2.0 * z2**2) - 3.0 * z3**3) / r

    def solution(x):
        x = np.asarray(x, dtype=np.float64)
        return x[..., 0] + x[..., 1] ** 2 + x[..., 2] ** 3

    problem = RsdeProblem(
        domain=Torus(R, r), drift=drift, sigma=np.diag([1.0, math.sqrt(5.0), math.sqrt(2.0)]),
        c=c, g=g, psi=psi, drift_bound=R + r, sigma_bound=math.sqrt(5.0), name="exp8_4")
    x0 = (1.0, 2.0, 0.5)
    return ProblemCatalogEntry(
        name="exp8_4", problem=problem,
        exact={"solution": 5.125, "solution_closed_form": float(solution(x0))},
        defaults={"t0": 0.0, "x0": x0, "T": 4.0}, solution=solution)


# -- von Mises distribution on the unit circle ---------------------------------------

def _von_mises(beta=1.0):
    beta = float(beta)
    if beta < 0:
        raise UsageError(f"von Mises concentration must be non-negative, got {beta}")
    grad = np.array([beta, 0.0])
    base = gradient_system(lambda x: np.broadcast_to(grad, x.shape), math.sqrt(2.0),
                           Ball(1.0, (0.0, 0.0)), name=f"von_mises({beta:g})", drift_bound=beta)
    problem = base.with_data(psi=lambda t, z: z[..., 0])
    if beta > 0:
        mean_cos = float(iv(1, beta) / iv(0, beta))
        kappa = float(beta * iv(0, beta) / iv(1, beta))
    else:
        mean_cos, kappa = 0.0, 2.0
    return ProblemCatalogEntry(name=problem.name, problem=problem,
                               exact={"psi_prime": mean_cos, "kappa": kappa},
                               defaults={"t0": 0.0, "x0": (0.0, 0.0), "T": 10.0, "T_ergodic": 1.0e4})


_BUILDERS = {
    "exp8_1": _exp8_1,
    "exp8_2": _exp8_2,
    "exp8_3": _exp8_3,
    "exp8_4": _exp8_4,
    "exp8_5": _exp8_5,
    "fisher3d": _fisher3d,
}

_VM = re.compile(r"^von_mises(?:\(\s*([0-9.eE+-]+)\s*\))?$")


def catalog_names():
    return sorted(_BUILDERS) + ["von_mises(beta)"]


def catalog(name):
    """Look up a catalog problem by name (``von_mises(2.5)`` selects the concentration)."""
    name = name.strip()
    if name in _BUILDERS:
        return _BUILDERS[name]()
    m = _VM.match(name)
    if m:
        return _von_mises(float(m.group(1)) if m.group(1) else 1.0)
    raise UsageError(f"unknown problem {name!r}; available: {', '.join(catalog_names())}")


def alpha(problem, z, t=0.0):
    """Co-normal weight ``(nu . a nu) / 2`` at boundary points ``z``."""
    z = np.asarray(z, dtype=np.float64)
    batch = z if z.ndim > 1 else z[None, :]
    nu = problem.domain.inward_normal(batch)
    a = problem.diffusion_matrix(t, batch)
    val = 0.5 * np.einsum("ni,nij,nj->n", nu, a, nu)
    if np.any(val <= 0.0):
        raise ModelError("diffusion is degenerate in the normal direction (nu . a nu <= 0)")
    return val if z.ndim > 1 else val[0]


def gradient_system(log_density_gradient, sigma, domain, name="gradient_system", drift_bound=math.inf):
    """Reflected Brownian dynamics ``dX = (sigma^2/2) grad log rho dt + sigma dW`` sampling ``rho``.

    ``log_density_gradient`` maps points ``(n, d)`` to gradients ``(n, d)``.
    """
    sigma = float(sigma)
    half_var = 0.5 * sigma * sigma

    def drift(t, x):
        return half_var * log_density_gradient(x)

    return RsdeProblem(domain=domain, drift=drift, sigma=sigma * np.eye(domain.dim),
                       sigma_bound=abs(sigma), drift_bound=half_var * drift_bound, name=name)
