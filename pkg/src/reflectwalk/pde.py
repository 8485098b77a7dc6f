"""Monte Carlo solvers for Robin, elliptic and Neumann-Poisson problems.

Each solver runs ``M`` independent chains from the same starting point and
averages a functional of the final state. Trajectories are processed in fixed
index chunks, so estimates do not depend on the number of workers.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ModelError, UsageError
from .geometry import snap_into
from .montecarlo import (DEFAULT_CHUNK, McAccumulator, McResult, RngStream, bernoulli_pm1,
                         merge_all, run_chunked)
from .stepper import ChainState, step_chain, step_poisson

__all__ = [
    "McResult",
    "Schedule",
    "ScheduleBlock",
    "solve_parabolic",
    "solve_elliptic_decay",
    "poisson_schedule",
    "solve_poisson",
    "fixed_step_poisson_diagnostic",
    "snap_step",
    "MAX_BLOCKS",
]


def _check_start(problem, x0):
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (problem.d,):
        raise UsageError(f"starting point must have dimension {problem.d}, got shape {x0.shape}")
    return snap_into(problem.domain, x0)


def _check_mc(M, h=None):
    if int(M) != M or M < 1:
        raise UsageError(f"M must be a positive integer, got {M}")
    if h is not None and not h > 0:
        raise UsageError(f"step size must be positive, got {h}")


def snap_step(span, h):
    """Largest step ``<= h`` dividing ``span`` into an integer number of steps."""
    if not (span > 0 and h > 0):
        raise UsageError(f"time span and step must be positive, got {span}, {h}")
    n = int(math.ceil(span / h - 1e-9))
    return span / n, n


def _run(M, seed, workers, chunk_size, simulate):
    def task(idx):
        return McAccumulator.from_samples(simulate(RngStream(seed, idx), idx.size))

    return merge_all(run_chunked(task, M, workers, chunk_size))


def solve_parabolic(problem, t0, x0, T, h, M, seed, workers=None, chunk_size=DEFAULT_CHUNK):
    """Estimate ``u(t0, x0)`` as the mean of ``phi(X_N) Y_N + Z_N``.

    If ``(T - t0)/h`` is not an integer the step is reduced to the nearest
    divisor; the step used is reported in ``McResult.h``.
    """
    _check_mc(M, h)
    x0 = _check_start(problem, x0)
    h_used, N = snap_step(T - t0, h)
    reach = problem.default_reach(h_used)
    start = time.perf_counter()

    def simulate(stream, n):
        s = ChainState.start(t0, x0, n)
        for k in range(N):
            s, _ = step_chain(problem, s, h_used, bernoulli_pm1(stream, problem.d), reach)
            s.t = t0 + (k + 1) * h_used
        return problem.eval_scalar("phi", s.t, s.X) * s.Y + s.Z

    acc = _run(M, seed, workers, chunk_size, simulate)
    return McResult.from_accumulator(acc, seed, h=h_used, wall_time=time.perf_counter() - start,
                                     extras={"n_steps": N, "h_requested": h})


def solve_elliptic_decay(problem, x0, T, h, M, seed, workers=None, chunk_size=DEFAULT_CHUNK):
    """Estimate the solution of the elliptic Robin problem with ``c < 0`` as the mean of ``Z_N``.

    Raises ModelError if ``c >= 0`` or ``gamma > 0`` is met along the way;
    problems without decay need :func:`solve_poisson`.
    """
    _check_mc(M, h)
    if not problem.autonomous:
        raise UsageError("the elliptic solver needs time-independent coefficients")
    if problem.c is None:
        raise ModelError("no decay term c: use the Poisson solver for Neumann problems without decay")
    x0 = _check_start(problem, x0)
    h_used, N = snap_step(T, h)
    reach = problem.default_reach(h_used)
    start = time.perf_counter()

    def simulate(stream, n):
        s = ChainState.start(0.0, x0, n)
        for _ in range(N):
            c = problem.eval_scalar("c", s.t, s.X)
            if np.any(c >= 0.0):
                raise ModelError("decay coefficient c must be negative in the domain "
                                 f"(found c={float(np.max(c)):.3g}); use the Poisson solver instead")
            s, ev = step_chain(problem, s, h_used, bernoulli_pm1(stream, problem.d), reach)
            if ev.any_reflected and problem.gamma is not None:
                if np.any(problem.eval_scalar("gamma", s.t, ev.contact.x_pi) > 0.0):
                    raise ModelError("Robin coefficient gamma must be non-positive on the boundary")
        return s.Z

    acc = _run(M, seed, workers, chunk_size, simulate)
    return McResult.from_accumulator(acc, seed, h=h_used, wall_time=time.perf_counter() - start,
                                     extras={"n_steps": N, "h_requested": h})


@dataclass(frozen=True)
class ScheduleBlock:
    j: int
    h_j: float
    N_j: int
    T_j: float


@dataclass(frozen=True)
class Schedule:
    """Shrinking-step schedule: block ``j`` runs ``N_j`` steps of size ``h_j``.

    ``T_j`` advances by ``upsilon / j**ell`` per block and ``Lambda`` is the first
    index with ``T_Lambda >= T``. The simulated time ``sum N_j h_j`` can fall
    slightly short of ``T_Lambda`` because of the floor in ``N_j``.
    """

    blocks: tuple
    h: float
    ell: float
    beta: float
    upsilon: float
    T: float

    @property
    def Lambda(self):
        return len(self.blocks)

    @property
    def total_steps(self):
        return sum(b.N_j for b in self.blocks)

    @property
    def simulated_time(self):
        return sum(b.N_j * b.h_j for b in self.blocks)


# T_j grows like j**(1 - ell) (like log j for ell = 1), so a large T / upsilon
# can ask for an absurd number of blocks; refuse instead of looping for ever
MAX_BLOCKS = 100_000


def poisson_schedule(h, ell, beta, upsilon, T):
    """Build the block schedule ``h_j = h/j**beta``, ``N_j = floor(upsilon/(h_j j**ell))``."""
    for key, val in (("h", h), ("upsilon", upsilon), ("T", T)):
        if not val > 0:
            raise ConfigError(f"{key} must be positive, got {val}", key=key)
    if not 0 < ell <= 1:
        raise ConfigError(f"ell must lie in (0, 1], got {ell}", key="ell")
    if not 0 < beta <= 1:
        raise ConfigError(f"beta must lie in (0, 1], got {beta}", key="beta")
    if not ell / 2 + beta > 1:
        raise ConfigError(f"need ell/2 + beta > 1, got {ell / 2 + beta:g}", key="beta")
    blocks = []
    T_j = 0.0
    j = 0
    while T_j < T:
        j += 1
        if j > MAX_BLOCKS:
            raise ConfigError(f"T={T} needs more than {MAX_BLOCKS} blocks with upsilon={upsilon}, ell={ell}",
                              key="T")
        h_j = h / j**beta
        span = upsilon / j**ell
        # guard the floor against representation error (e.g. 1/0.2 = 4.999...)
        N_j = int(math.floor(span / h_j + 1e-9))
        if N_j < 1:
            raise ConfigError(f"block {j} gets no steps: h={h} is too large for upsilon={upsilon}", key="h")
        T_j += span
        blocks.append(ScheduleBlock(j, h_j, N_j, T_j))
    return Schedule(tuple(blocks), h, ell, beta, upsilon, T)


def solve_poisson(problem, x0, schedule, M, seed, workers=None, chunk_size=DEFAULT_CHUNK):
    """Estimate ``u(x0) - u_bar`` for the Neumann-Poisson problem by the mean of ``Z``.

    The volume and boundary data ``phi1``, ``phi2`` are assumed to satisfy the
    compatibility condition; the solver does not check it.
    """
    _check_mc(M)
    x0 = _check_start(problem, x0)
    start = time.perf_counter()

    def simulate(stream, n):
        s = ChainState.start(0.0, x0, n)
        for blk in schedule.blocks:
            reach = problem.default_reach(blk.h_j)
            for _ in range(blk.N_j):
                s, _ = step_poisson(problem, s, blk.h_j, bernoulli_pm1(stream, problem.d), reach)
        return s.Z

    acc = _run(M, seed, workers, chunk_size, simulate)
    return McResult.from_accumulator(acc, seed, schedule=schedule, h=schedule.h,
                                     wall_time=time.perf_counter() - start,
                                     extras={"n_steps": schedule.total_steps, "Lambda": schedule.Lambda})


def fixed_step_poisson_diagnostic(problem, x0, h, checkpoints, M, seed, workers=None,
                                  chunk_size=DEFAULT_CHUNK):
    """Mean of ``Z_N`` at the given step counts when the Poisson chain runs with a constant step.

    With a fixed step the discretization bias accumulates, so the mean drifts
    roughly linearly in ``N`` instead of settling; this is why the Poisson
    solver shrinks its steps. Returns a list of ``(N, mean, half_width)``.
    """
    _check_mc(M, h)
    x0 = _check_start(problem, x0)
    checkpoints = sorted(int(c) for c in checkpoints)
    if not checkpoints or checkpoints[0] < 1:
        raise UsageError("checkpoints must be positive step counts")
    reach = problem.default_reach(h)

    def task(idx):
        stream = RngStream(seed, idx)
        s = ChainState.start(0.0, x0, idx.size)
        out = []
        for k in range(1, checkpoints[-1] + 1):
            s, _ = step_poisson(problem, s, h, bernoulli_pm1(stream, problem.d), reach)
            if k in checkpoints:
                out.append(McAccumulator.from_samples(s.Z))
        return out

    parts = run_chunked(task, M, workers, chunk_size)
    from .montecarlo import mc_mean
    rows = []
    for i, n in enumerate(checkpoints):
        mean, _, ci = mc_mean(merge_all(p[i] for p in parts))
        rows.append((n, mean, ci))
    return rows
