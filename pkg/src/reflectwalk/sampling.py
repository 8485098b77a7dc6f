"""Sampling densities supported on a closed domain and their boundary traces.

The sampler runs reflected Brownian dynamics whose invariant density is the
target ``rho``. Interior samples are the chain states after a burn-in.
Boundary samples are the contact points of reflection events weighted by
``r / alpha``; weighted averages of ``psi`` over them estimate the average of
``psi`` against the normalized boundary restriction of ``rho``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ModelError, UsageError
from .ergodic import _n_steps, walk_blocks
from .geometry import Ball, Torus
from .models import alpha as co_normal_weight
from .models import gradient_system

__all__ = ["WeightedBoundarySample", "BoundarySamples", "sample_interior", "sample_boundary"]

_BLOCK = 4096


@dataclass(frozen=True)
class WeightedBoundarySample:
    z: np.ndarray
    weight: float


@dataclass
class BoundarySamples:
    """Contact points ``z`` (shape ``(m, d)``) with weights ``r / alpha``."""

    z: np.ndarray
    weight: np.ndarray
    r: np.ndarray
    n_steps: int
    h: float

    def __len__(self):
        return self.weight.size

    def __getitem__(self, i):
        return WeightedBoundarySample(self.z[i], float(self.weight[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def weighted_mean(self, psi):
        """``sum w psi(z) / sum w``, or None without samples."""
        total = float(np.sum(self.weight))
        if total <= 0:
            return None
        return float(np.sum(self.weight * np.asarray(psi(self.z), dtype=np.float64))) / total

    def mass(self):
        """Estimate of the boundary mass of the unnormalized target: ``2 sum w / (N h)``."""
        return 2.0 * float(np.sum(self.weight)) / (self.n_steps * self.h)


def _checked(target):
    def grad(x):
        g = np.asarray(target(x), dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise ModelError("log-density gradient is not finite at a visited point")
        return g

    return grad


def _start(domain, x0):
    if x0 is not None:
        return np.asarray(x0, dtype=np.float64)
    if isinstance(domain, Ball):
        return np.asarray(domain.center, dtype=np.float64)
    if isinstance(domain, Torus):
        return np.array([domain.major, 0.0, 0.0])
    raise UsageError("a starting point x0 is required for this domain")


def _problem(target, domain, sigma):
    if sigma < 0:
        raise UsageError(f"sigma must be non-negative, got {sigma}")
    return gradient_system(_checked(target), sigma, domain, name="sampler")


def sample_interior(target, domain, sigma, h, n, burn_in=None, seed=0, x0=None):
    """``n`` consecutive chain states after ``burn_in`` steps (default ``ceil(10/h)``).

    ``target(x)`` returns ``grad log rho`` for a batch of points.
    """
    if not h > 0:
        raise UsageError(f"step size must be positive, got {h}")
    if n < 1:
        raise UsageError(f"number of samples must be positive, got {n}")
    if burn_in is None:
        burn_in = int(math.ceil(10.0 / h))
    problem = _problem(target, domain, sigma)
    # blocks record the state at the start of each step, so skipping
    # burn_in + 1 steps makes the kept blocks hold X_{burn_in+1}, ..., X_{burn_in+n}
    skip = int(burn_in) + 1
    out = []
    done = 0
    for hist, _, _ in walk_blocks(problem, _start(domain, x0), h, _chunks(skip) + _chunks(n), seed):
        if done >= skip:
            out.append(hist)
        done += hist.shape[0]
    return np.concatenate(out)


def _chunks(n):
    full, rest = divmod(int(n), _BLOCK)
    return [_BLOCK] * full + ([rest] if rest else [])


def sample_boundary(target, domain, sigma, h, T, seed=0, x0=None):
    """Weighted contact points of one trajectory of length ``T``."""
    problem = _problem(target, domain, sigma)
    if not sigma > 0:
        raise UsageError("boundary sampling needs sigma > 0")
    N = _n_steps(T, h)
    zs, rs = [], []
    for _, z, r in walk_blocks(problem, _start(domain, x0), h, _chunks(N), seed):
        zs.append(z)
        rs.append(r)
    z = np.concatenate(zs) if zs else np.zeros((0, domain.dim))
    r = np.concatenate(rs) if rs else np.zeros(0)
    a = co_normal_weight(problem, z) if r.size else np.zeros(0)
    return BoundarySamples(z=z, weight=r / a if r.size else r, r=r, n_steps=N, h=h)
