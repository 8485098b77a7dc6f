"""Time-averaging and ensemble-averaging estimators of ergodic limits.

A single long reflected trajectory gives, with ``N`` steps of size ``h``::

    phi_hat       = (1/N) sum_k phi(X_k)
    kappa_hat     = 2/(N h) sum r/alpha(x_pi)
    psi_hat       = 2/(N h) sum r psi(x_pi)/alpha(x_pi)
    psi_prime_hat = sum r psi/alpha / sum r/alpha
    psi_tilde_hat = sum r psi / sum r

where the boundary sums run over reflection events. Statistical errors come
from splitting the trajectory into ``L`` consecutive blocks.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ModelError, UsageError
from .geometry import snap_into
from .models import alpha as co_normal_weight
from .montecarlo import (DEFAULT_CHUNK, McAccumulator, McResult, RngStream, bernoulli_pm1,
                         merge_all, run_chunked)
from .stepper import step_x

__all__ = [
    "ErgodicAccumulator",
    "TimeAverages",
    "EnsembleBoundary",
    "accumulate",
    "accumulate_block",
    "finalize",
    "block_error",
    "time_average",
    "walk_blocks",
    "ensemble_boundary",
    "ensemble_phi",
]

_FIELDS = ("n_steps", "sum_phi", "sum_w", "sum_wpsi", "sum_r", "sum_rpsi")


@dataclass
class ErgodicAccumulator:
    """Running sums of one trajectory plus snapshots taken at block boundaries."""

    h: float
    n_steps: int = 0
    sum_phi: float = 0.0
    sum_w: float = 0.0
    sum_wpsi: float = 0.0
    sum_r: float = 0.0
    sum_rpsi: float = 0.0
    n_reflections: int = 0
    snapshots: list = field(default_factory=list)

    def totals(self):
        return tuple(getattr(self, f) for f in _FIELDS)

    def snapshot(self):
        """Mark the end of a block."""
        self.snapshots.append(self.totals())
        return self


@dataclass
class TimeAverages:
    """Estimates from one trajectory; an error of None means it could not be formed."""

    phi_hat: float
    kappa_hat: float
    psi_hat: float
    psi_prime_hat: Optional[float]
    psi_tilde_hat: Optional[float]
    phi_err: Optional[float] = None
    kappa_err: Optional[float] = None
    psi_err: Optional[float] = None
    psi_prime_err: Optional[float] = None
    psi_tilde_err: Optional[float] = None
    n_steps: int = 0
    n_reflections: int = 0
    h: float = math.nan
    blocks: int = 0

    def stat_err(self, name):
        return getattr(self, name.replace("_hat", "") + "_err")


def _weights(alpha_z):
    alpha_z = np.asarray(alpha_z, dtype=np.float64)
    if np.any(~(alpha_z > 0.0)):
        raise ModelError("co-normal weight alpha must be positive on the boundary")
    return alpha_z


def accumulate(acc, event, x_k, phi, psi, alpha):
    """Add one step of a single trajectory.

    ``x_k`` is the state before the step, ``event`` the step's outcome;
    ``phi(x)``, ``psi(z)`` and ``alpha(z)`` act on batches.
    """
    x_k = np.atleast_2d(np.asarray(x_k, dtype=np.float64))
    acc.sum_phi += float(np.sum(phi(x_k)))
    acc.n_steps += 1
    if event.any_reflected:
        z, r = event.contact.x_pi, event.contact.r
        _add_boundary(acc, z, r, psi, alpha)
    return acc


def _add_boundary(acc, z, r, psi, alpha):
    if r.size == 0:
        return
    a = _weights(alpha(z))
    p = np.asarray(psi(z), dtype=np.float64)
    w = r / a
    acc.sum_w += float(np.sum(w))
    acc.sum_wpsi += float(np.sum(w * p))
    acc.sum_r += float(np.sum(r))
    acc.sum_rpsi += float(np.sum(r * p))
    acc.n_reflections += int(r.size)


def accumulate_block(acc, X_hist, z, r, phi, psi, alpha):
    """Add a run of consecutive steps: visited states ``X_hist`` and all contacts ``(z, r)``."""
    X_hist = np.asarray(X_hist, dtype=np.float64)
    if X_hist.shape[0]:
        acc.sum_phi += float(np.sum(phi(X_hist)))
    acc.n_steps += X_hist.shape[0]
    _add_boundary(acc, np.asarray(z, dtype=np.float64).reshape(-1, X_hist.shape[1]),
                  np.asarray(r, dtype=np.float64).ravel(), psi, alpha)
    return acc


def block_error(values):
    """Half-width ``2 sqrt(J)`` with ``J = (1/L)((1/(L-1)) sum f^2 - ((1/L) sum f)^2)``.

    Returns None for fewer than two blocks.
    """
    f = np.asarray(values, dtype=np.float64)
    L = f.size
    if L < 2:
        return None
    J = (np.sum(f * f) / (L - 1) - (np.sum(f) / L) ** 2) / L
    return 2.0 * math.sqrt(max(J, 0.0))


def _ratio(num, den):
    return num / den if den > 0 else None


def finalize(acc):
    """Turn running sums into estimates and block-based statistical errors."""
    N, h = acc.n_steps, acc.h
    if N == 0:
        raise UsageError("no steps accumulated")
    out = TimeAverages(
        phi_hat=acc.sum_phi / N,
        kappa_hat=2.0 * acc.sum_w / (N * h),
        psi_hat=2.0 * acc.sum_wpsi / (N * h),
        psi_prime_hat=_ratio(acc.sum_wpsi, acc.sum_w),
        psi_tilde_hat=_ratio(acc.sum_rpsi, acc.sum_r),
        n_steps=N, n_reflections=acc.n_reflections, h=h, blocks=len(acc.snapshots))
    if len(acc.snapshots) >= 2:
        snaps = np.array([(0,) * len(_FIELDS)] + list(acc.snapshots), dtype=np.float64)
        d = np.diff(snaps, axis=0)
        n, sphi, sw, swp, sr, srp = d.T
        out.phi_err = block_error(sphi / n)
        out.kappa_err = block_error(2.0 * sw / (n * h))
        out.psi_err = block_error(2.0 * swp / (n * h))
        if np.all(sw > 0):
            out.psi_prime_err = block_error(swp / sw)
        if np.all(sr > 0):
            out.psi_tilde_err = block_error(srp / sr)
    return out


def _default_fields(problem, phi, psi, alpha):
    if phi is None:
        phi = (lambda x: problem.eval_scalar("phi", 0.0, x))
    if psi is None:
        psi = (lambda z: problem.eval_scalar("psi", 0.0, z))
    if alpha is None:
        alpha = (lambda z: co_normal_weight(problem, z))
    return phi, psi, alpha


def _block_sizes(N, blocks):
    if blocks < 1:
        raise UsageError(f"number of blocks must be positive, got {blocks}")
    if N < blocks:
        raise UsageError(f"{N} steps cannot be split into {blocks} blocks")
    base = N // blocks
    sizes = [base] * blocks
    sizes[-1] += N - base * blocks
    return sizes


def _n_steps(T, h):
    if not (h > 0 and T > 0):
        raise UsageError(f"T and h must be positive, got T={T}, h={h}")
    N = int(math.floor(T / h + 1e-9))
    if N < 1:
        raise UsageError(f"T={T} is shorter than one step h={h}")
    return N


def walk_blocks(problem, x0, h, block_sizes, seed, trajectory_index=0, t0=0.0, reach=None):
    """Run one reflected Euler trajectory, yielding ``(X_hist, z, r)`` per block.

    ``X_hist`` holds the states at the start of each step of the block; ``z``
    and ``r`` list the boundary contacts and distances of the block's
    reflection events in order.
    """
    d = problem.d
    X = snap_into(problem.domain, np.asarray(x0, dtype=np.float64).reshape(1, d))
    if reach is None:
        reach = problem.default_reach(h)
    stream = RngStream(seed, [trajectory_index])
    t = float(t0)
    for nb in block_sizes:
        xis = bernoulli_pm1(stream, d, nb)
        hist = np.empty((nb, d))
        zs, rs = [], []
        for k in range(nb):
            hist[k] = X[0]
            X, ev = step_x(problem, t, X, h, xis[k], reach)
            t += h
            if ev.index.size:
                zs.append(ev.contact.x_pi[0])
                rs.append(ev.contact.r[0])
        z = np.array(zs).reshape(-1, d)
        yield hist, z, np.array(rs)


def time_average(problem, x0, T, h, seed, blocks=100, phi=None, psi=None, alpha=None, t0=0.0,
                 trajectory_index=0):
    """Time averages over one trajectory of length ``T`` split into ``blocks`` blocks.

    Observables default to the problem's ``phi`` and ``psi``.
    """
    phi, psi, alpha = _default_fields(problem, phi, psi, alpha)
    N = _n_steps(T, h)
    acc = ErgodicAccumulator(h=h)
    for hist, z, r in walk_blocks(problem, x0, h, _block_sizes(N, blocks), seed, trajectory_index, t0):
        accumulate_block(acc, hist, z, r, phi, psi, alpha)
        acc.snapshot()
    return finalize(acc)


@dataclass
class EnsembleBoundary:
    """Ensemble estimates of the normalized boundary average.

    ``ratio_of_means`` divides Monte Carlo means of the weighted sums over the
    first ``N-1`` steps; ``mean_of_ratios`` averages per-trajectory ratios over
    all ``N`` steps, skipping trajectories that never touched the boundary.
    """

    ratio_of_means: Optional[float]
    ratio_of_means_error: Optional[float]
    mean_of_ratios: Optional[float]
    mean_of_ratios_error: Optional[float]
    M: int
    n_without_contact: int
    h: float
    seed: int
    wall_time: float = 0.0


def _run_ensemble(problem, x0, T, h, M, seed, workers, chunk_size, on_reflect, on_finish, t0=0.0):
    N = _n_steps(T, h)
    d = problem.d
    reach = problem.default_reach(h)
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (d,):
        raise UsageError(f"starting point must have dimension {d}, got shape {x0.shape}")
    x0 = snap_into(problem.domain, x0)

    def task(idx):
        stream = RngStream(seed, idx)
        X = np.broadcast_to(x0, (idx.size, d)).copy()
        state = {}
        t = float(t0)
        for k in range(N):
            X, ev = step_x(problem, t, X, h, bernoulli_pm1(stream, d), reach)
            t += h
            if ev.index.size:
                on_reflect(state, k, N, ev)
        return on_finish(state, X, idx.size)

    return run_chunked(task, M, workers, chunk_size), N


def ensemble_boundary(problem, T, h, M, seed, x0, psi=None, alpha=None, workers=None,
                      chunk_size=DEFAULT_CHUNK, t0=0.0):
    """Ensemble estimators of the boundary ergodic limit from ``M`` trajectories of length ``T``."""
    _, psi, alpha = _default_fields(problem, None, psi, alpha)
    start = time.perf_counter()

    def on_reflect(state, k, N, ev):
        n = ev.reflected.size
        if not state:
            state.update(num=np.zeros(n), den=np.zeros(n), num1=np.zeros(n), den1=np.zeros(n))
        z, r = ev.contact.x_pi, ev.contact.r
        w = r / _weights(alpha(z))
        wp = w * np.asarray(psi(z), dtype=np.float64)
        i = ev.index
        state["num"][i] += wp
        state["den"][i] += w
        if k <= N - 2:
            state["num1"][i] += wp
            state["den1"][i] += w

    def on_finish(state, X, n):
        if not state:
            z = np.zeros(n)
            return z, z, z, z
        return state["num1"], state["den1"], state["num"], state["den"]

    parts, _ = _run_ensemble(problem, x0, T, h, M, seed, workers, chunk_size, on_reflect, on_finish, t0)
    num1, den1, num, den = (np.concatenate([p[j] for p in parts]) for j in range(4))

    rom = rom_err = None
    if np.sum(den1) > 0:
        mn, md = float(np.mean(num1)), float(np.mean(den1))
        rom = mn / md
        # delta-method variance of a ratio of means, divisor M as for plain means
        resid = num1 - rom * den1
        rom_err = 2.0 * math.sqrt(float(np.mean(resid * resid)) / M) / md
    hit = den > 0
    mor = mor_err = None
    if np.any(hit):
        res = mc_stats(num[hit] / den[hit])
        mor, mor_err = res[0], res[2]
    return EnsembleBoundary(ratio_of_means=rom, ratio_of_means_error=rom_err, mean_of_ratios=mor,
                            mean_of_ratios_error=mor_err, M=M, n_without_contact=int(np.sum(~hit)),
                            h=h, seed=seed, wall_time=time.perf_counter() - start)


def mc_stats(values):
    from .montecarlo import mc_mean
    return mc_mean(McAccumulator.from_samples(values))


def ensemble_phi(problem, T, h, M, seed, x0, phi=None, workers=None, chunk_size=DEFAULT_CHUNK, t0=0.0):
    """Monte Carlo mean of ``phi(X_N)`` over ``M`` trajectories run to time ``T``."""
    phi, _, _ = _default_fields(problem, phi, None, None)
    start = time.perf_counter()

    def on_finish(state, X, n):
        return McAccumulator.from_samples(phi(X))

    parts, N = _run_ensemble(problem, x0, T, h, M, seed, workers, chunk_size, lambda *a: None, on_finish, t0)
    return McResult.from_accumulator(merge_all(parts), seed, h=h, wall_time=time.perf_counter() - start,
                                     extras={"n_steps": N})
