"""Random streams, Monte Carlo accumulators and the chunked parallel driver.

Every trajectory ``i`` of a run with master seed ``s`` draws its randomness
from a counter-based stream keyed by ``(s, i)``: the k-th draw is a hash of
``(key(s, i), k)``. Nothing depends on how trajectories are batched or which
worker executes them, so results are bit-identical for any worker count and a
single trajectory can be regenerated in isolation.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, TypeVar

import numpy as np

from .errors import UsageError

__all__ = [
    "RngStream",
    "bernoulli_pm1",
    "three_point",
    "McAccumulator",
    "mc_mean",
    "resolve_workers",
    "run_chunked",
    "merge_all",
    "McResult",
    "WORKERS_ENV",
    "DEFAULT_CHUNK",
]

WORKERS_ENV = "REFLECTWALK_WORKERS"
DEFAULT_CHUNK = 1 << 15

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_SALT = np.uint64(0xD1B54A32D192ED03)
_S30, _S27, _S31, _S11 = (np.uint64(v) for v in (30, 27, 31, 11))
_INV53 = 2.0**-53
_SQRT3 = math.sqrt(3.0)


def _mix64(z):
    # splitmix64 finalizer; uint64 arithmetic wraps modulo 2**64
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


class RngStream:
    """Independent random streams for a batch of trajectories.

    Parameters
    ----------
    master_seed : int
        64-bit run seed.
    trajectory_index : int or array of int
        Global index of each trajectory in the batch.
    counter : int
        Index of the next draw. All trajectories of a batch advance together.
    """

    def __init__(self, master_seed, trajectory_index, counter=0):
        self.master_seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
        idx = np.atleast_1d(np.asarray(trajectory_index, dtype=np.uint64))
        self.trajectory_index = idx
        self.counter = int(counter)
        with np.errstate(over="ignore"):
            base = _mix64(np.array([self.master_seed], dtype=np.uint64) + _SALT)
            self._keys = _mix64(base ^ _mix64(idx * _GOLDEN + _GOLDEN))

    def __len__(self):
        return self._keys.shape[0]

    def words(self, n_draws, lanes=1):
        """Raw 64-bit words, shape ``(n_draws, n_traj, lanes)``; advances the counter."""
        ctr = np.arange(self.counter, self.counter + n_draws, dtype=np.uint64)
        lane = np.arange(lanes, dtype=np.uint64)
        c = ctr[:, None] * np.uint64(lanes) + lane[None, :]
        with np.errstate(over="ignore"):
            out = _mix64(self._keys[None, :, None] ^ _mix64(c[:, None, :] * _GOLDEN + _SALT))
        self.counter += n_draws
        return out

    def uniforms(self, n_draws, lanes=1):
        """Uniform variates on [0, 1) with 53-bit resolution."""
        return (self.words(n_draws, lanes) >> _S11).astype(np.float64) * _INV53


def bernoulli_pm1(stream, d, n_draws=None):
    """Vectors of independent symmetric ±1 variables.

    Returns shape ``(n_traj, d)`` for one draw, or ``(n_draws, n_traj, d)``
    when ``n_draws`` is given.
    """
    if d < 1 or d > 64:
        raise UsageError(f"dimension must lie in [1, 64], got {d}")
    k = 1 if n_draws is None else n_draws
    w = stream.words(k, 1)[..., 0]
    shifts = np.arange(d, dtype=np.uint64)
    bits = (w[..., None] >> shifts) & np.uint64(1)
    xi = bits.astype(np.float64) * 2.0 - 1.0
    return xi[0] if n_draws is None else xi


def three_point(stream, d, n_draws=None):
    """Vectors with components in {0, ±√3}, P(0) = 2/3, P(±√3) = 1/6 each."""
    if d < 1:
        raise UsageError(f"dimension must be positive, got {d}")
    k = 1 if n_draws is None else n_draws
    u = stream.uniforms(k, d)
    xi = np.where(u < 2.0 / 3.0, 0.0, np.where(u < 5.0 / 6.0, _SQRT3, -_SQRT3))
    return xi[0] if n_draws is None else xi


@dataclass
class McAccumulator:
    """Running count, sum and sum of squares of Monte Carlo samples."""

    count: int = 0
    sum: float = 0.0
    sum_sq: float = 0.0

    def add(self, values):
        v = np.asarray(values, dtype=np.float64).ravel()
        self.count += v.size
        self.sum += float(np.sum(v))
        self.sum_sq += float(np.sum(v * v))
        return self

    def merge(self, other):
        return McAccumulator(self.count + other.count, self.sum + other.sum,
                             self.sum_sq + other.sum_sq)

    @classmethod
    def from_samples(cls, values):
        return cls().add(values)


def mc_mean(acc):
    """Sample mean, variance of the mean and 95% half-width.

    Uses the population-style estimator ``D = (mean(x**2) - mean(x)**2) / M``
    and the half-width ``2 * sqrt(D)``. Returns None for an empty accumulator.
    """
    if acc.count == 0:
        return None
    m = acc.count
    mean = acc.sum / m
    var_mean = max(acc.sum_sq / m - mean * mean, 0.0) / m
    return mean, var_mean, 2.0 * math.sqrt(var_mean)


@dataclass
class McResult:
    """Monte Carlo estimate with its 95% half-width ``2 sqrt(D)``.

    ``h`` is the step actually used (after any snapping); ``schedule`` is set
    instead for variable-step runs. ``extras`` carries driver-specific counts.
    """

    estimate: float
    mc_error: float
    M: int
    seed: int
    variance: float = 0.0
    h: Optional[float] = None
    schedule: Optional[object] = None
    wall_time: float = 0.0
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_accumulator(cls, acc, seed, **kwargs):
        mean, var, ci = mc_mean(acc)
        return cls(estimate=mean, mc_error=ci, M=acc.count, seed=seed, variance=var, **kwargs)


def resolve_workers(workers=None):
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        if env is None or env.strip() == "":
            return 1
        try:
            workers = int(env)
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    if workers < 1:
        raise UsageError(f"workers must be >= 1, got {workers}")
    return int(workers)


T = TypeVar("T")


def run_chunked(task: Callable[[np.ndarray], T], n_total: int, workers: Optional[int] = None,
                chunk_size: int = DEFAULT_CHUNK) -> list:
    """Run ``task`` over fixed index chunks ``[0, chunk), [chunk, 2 chunk), ...``.

    Chunk boundaries depend only on ``n_total`` and ``chunk_size``; results are
    returned in chunk order so that any reduction over them is independent of
    the worker count.
    """
    if n_total < 1:
        raise UsageError(f"number of trajectories must be positive, got {n_total}")
    chunks = [np.arange(s, min(s + chunk_size, n_total), dtype=np.int64)
              for s in range(0, n_total, chunk_size)]
    workers = resolve_workers(workers)
    if workers == 1 or len(chunks) == 1:
        return [task(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, chunks))


def merge_all(accs: Sequence[McAccumulator]) -> McAccumulator:
    out = McAccumulator()
    for a in accs:
        out = out.merge(a)
    return out
