"""Reproducible multi-mode Brownian increments on refinable time grids.

Increment matrices are generated with the counter-based Philox generator keyed
by ``(master_seed, path_index)``, so any path can be (re)produced in isolation
and path order never matters.  Bridge refinement inserts conditionally correct
sub-increments whose block sums reproduce the coarse increments exactly, which
is what strong-convergence studies need.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

# stream tags keep the core increments and each refinement level independent
_STREAM_SAMPLE = 0
_STREAM_REFINE = 1

_DUMP_MAGIC = b"BWPATH01"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0 = t_0 < ... < t_n = t_end`` with ``n = n_steps``."""

    t0: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.t_end > self.t0:
            raise ValueError("t_end must exceed t0")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t0) / self.n_steps

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t0, self.t_end, self.n_steps * factor)


def _generator(master_seed: int, path_index: int, stream: int, depth: int = 0) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(path_index, stream, depth))
    return np.random.Generator(np.random.Philox(seq))


@dataclass
class BrownianPath:
    """Per-mode Wiener increments ``increments[step, mode] ~ N(0, dt)``.

    ``(master_seed, path_index)`` plus the grid determine the increments
    bit-for-bit; ``refine_depth`` counts bridge refinements so refined paths
    draw from their own substream.
    """

    grid: TimeGrid
    increments: np.ndarray
    master_seed: int
    path_index: int
    refine_depth: int = 0

    @property
    def n_modes(self) -> int:
        return self.increments.shape[1]

    def cumulative(self) -> np.ndarray:
        """W with W[0] = 0, shape (n_steps + 1, n_modes)."""
        w = np.empty((self.grid.n_steps + 1, self.n_modes))
        w[0] = 0.0
        np.cumsum(self.increments, axis=0, out=w[1:])
        return w


def sample_path(master_seed: int, path_index: int, grid: TimeGrid, n_modes: int) -> BrownianPath:
    """Draw the increment matrix for one path index.

    Each (path) stream is an independent Philox substream of the master seed,
    so sampling path 7 before or after path 3 yields identical matrices.
    """
    if n_modes < 0:
        raise ValueError("n_modes must be >= 0")
    rng = _generator(master_seed, path_index, _STREAM_SAMPLE)
    inc = rng.standard_normal((grid.n_steps, n_modes)) * np.sqrt(grid.dt)
    return BrownianPath(grid=grid, increments=inc, master_seed=master_seed, path_index=path_index)


def sample_increment_block(master_seed: int, path_indices, grid: TimeGrid, n_modes: int) -> np.ndarray:
    """Stack per-path increments into shape (n_paths, n_steps, n_modes)."""
    out = np.empty((len(path_indices), grid.n_steps, n_modes))
    for i, p in enumerate(path_indices):
        out[i] = sample_path(master_seed, int(p), grid, n_modes).increments
    return out


def refine(path: BrownianPath, factor: int) -> BrownianPath:
    """Bridge-refine a path, inserting ``factor - 1`` points per step.

    Conditioned on a coarse increment D over a step, the sub-increments are
    jointly Gaussian with mean D/factor and covariance dt_f (I - J/factor);
    drawing iid g ~ N(0, dt_f) and using g - mean(g) + D/factor realises
    exactly that law, and the block sums reproduce D up to roundoff.
    """
    if factor < 2:
        raise ValueError("refinement factor must be >= 2")
    fine_grid = path.grid.refined(factor)
    n, K = path.increments.shape
    rng = _generator(path.master_seed, path.path_index, _STREAM_REFINE, path.refine_depth)
    g = rng.standard_normal((n, factor, K)) * np.sqrt(fine_grid.dt)
    g += (path.increments[:, None, :] - g.sum(axis=1, keepdims=True)) / factor
    return BrownianPath(
        grid=fine_grid,
        increments=g.reshape(n * factor, K),
        master_seed=path.master_seed,
        path_index=path.path_index,
        refine_depth=path.refine_depth + 1,
    )


def coarsen(path: BrownianPath, factor: int) -> BrownianPath:
    """Sum increments in blocks of ``factor``; exact inverse of refinement."""
    n, K = path.increments.shape
    if n % factor != 0:
        raise ValueError("n_steps must be divisible by the coarsening factor")
    inc = path.increments.reshape(n // factor, factor, K).sum(axis=1)
    return BrownianPath(
        grid=TimeGrid(path.grid.t0, path.grid.t_end, n // factor),
        increments=inc,
        master_seed=path.master_seed,
        path_index=path.path_index,
        refine_depth=path.refine_depth,
    )


def integrated_gbm(path: BrownianPath, mode: int, alpha: float) -> np.ndarray:
    """Left-endpoint Riemann sums of ``int_0^t exp(-alpha W_s) ds``.

    Returns the series on the path's grid times (first entry 0); it is strictly
    increasing, so hitting times read off it are unique.
    """
    w = path.cumulative()[:, mode]
    out = np.empty(path.grid.n_steps + 1)
    out[0] = 0.0
    np.cumsum(np.exp(-alpha * w[:-1]) * path.grid.dt, out=out[1:])
    return out


def coarsen_increments(block: np.ndarray, factor: int) -> np.ndarray:
    """Block-sum stacked increments (n_paths, n_steps, K) by ``factor``."""
    p, n, k = block.shape
    if n % factor != 0:
        raise ValueError("n_steps must be divisible by the coarsening factor")
    return block.reshape(p, n // factor, factor, k).sum(axis=2)


def integrated_exponential(increments: np.ndarray, dt: float, alpha: float) -> np.ndarray:
    """Vectorised :func:`integrated_gbm` over stacked single-mode increments.

    ``increments`` has shape (..., n_steps); returns the left-endpoint sums of
    ``int exp(-alpha W) ds`` with shape (..., n_steps + 1).
    """
    inc = np.asarray(increments, dtype=float)
    w = np.concatenate([np.zeros(inc.shape[:-1] + (1,)), np.cumsum(inc, axis=-1)], axis=-1)
    out = np.empty_like(w)
    out[..., 0] = 0.0
    np.cumsum(np.exp(-alpha * w[..., :-1]) * dt, axis=-1, out=out[..., 1:])
    return out


def hitting_time(times: np.ndarray, series: np.ndarray, level: float) -> float:
    """First time a nondecreasing series reaches ``level``, interpolated linearly.

    Returns ``nan`` when the level is not reached on the grid.
    """
    idx = np.searchsorted(series, level)
    if idx >= len(series):
        return float("nan")
    if idx == 0:
        return float(times[0])
    t0, t1 = times[idx - 1], times[idx]
    s0, s1 = series[idx - 1], series[idx]
    if s1 == s0:
        return float(t1)
    return float(t0 + (level - s0) / (s1 - s0) * (t1 - t0))


def hitting_times(times: np.ndarray, series: np.ndarray, level: float) -> np.ndarray:
    """Row-wise :func:`hitting_time` over stacked series of shape (..., n+1)."""
    s = np.asarray(series, dtype=float)
    flat = s.reshape(-1, s.shape[-1])
    out = np.array([hitting_time(times, row, level) for row in flat])
    return out.reshape(s.shape[:-1])


def dump_path(path: BrownianPath, fh) -> None:
    """Binary dump: fixed header then row-major little-endian float64 body."""
    n, K = path.increments.shape
    fh.write(_DUMP_MAGIC)
    fh.write(
        struct.pack(
            "<QQddQQQ",
            path.master_seed,
            path.path_index,
            path.grid.t0,
            path.grid.t_end,
            path.grid.n_steps,
            K,
            path.refine_depth,
        )
    )
    fh.write(np.ascontiguousarray(path.increments, dtype="<f8").tobytes())


def load_path(fh) -> BrownianPath:
    magic = fh.read(len(_DUMP_MAGIC))
    if magic != _DUMP_MAGIC:
        raise ValueError("not a Brownian path dump")
    header = struct.unpack("<QQddQQQ", fh.read(struct.calcsize("<QQddQQQ")))
    master_seed, path_index, t0, t_end, n_steps, n_modes, depth = header
    body = np.frombuffer(fh.read(8 * n_steps * n_modes), dtype="<f8").reshape(n_steps, n_modes)
    return BrownianPath(
        grid=TimeGrid(t0, t_end, int(n_steps)),
        increments=body.astype(np.float64),
        master_seed=int(master_seed),
        path_index=int(path_index),
        refine_depth=int(depth),
    )
