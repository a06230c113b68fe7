#!/usr/bin/env python3
"""
Delay-aligned time grid, reproducible Brownian ensembles and deterministic
cross-path reductions shared by every delaymp module.

Column conventions used throughout lib/:

  state arrays (x, controls)   node i in [-m, n_steps]     -> column i + m
  backward arrays (y, z, p..)  node i in [0, n_steps + m]  -> column i
  Brownian increments          cell i in [-m, n_steps+m-1] -> column i + m
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from errors import (
    ConfigError,
    EnsembleMismatch,
    GridError,
    NonDivisibleHorizon,
    NonPositiveDelay,
)

DEFAULT_SEED = 20240101
DIVISIBILITY_RTOL = 1e-9
SEED_MASK = (1 << 64) - 1

DEFAULT_TOLERANCES = {
    "k_vanish": 2e-2,
    "adjoint": 1e-2,
    "margin": 1e-9,
    "stderr_multiple": 3.0,
}


@dataclass(frozen=True)
class TimeGrid:
    T: float
    delta: float
    m: int
    h: float
    n_steps: int

    @property
    def n_state_nodes(self):
        return self.n_steps + self.m + 1

    @property
    def n_backward_nodes(self):
        return self.n_steps + self.m + 1

    @property
    def n_cells(self):
        return self.n_steps + 2 * self.m

    def time_of(self, i):
        return i * self.h

    def index_of(self, t):
        """Node index of time t; t must sit on the grid"""
        i = int(round(t / self.h))
        if abs(i * self.h - t) > DIVISIBILITY_RTOL * max(1.0, abs(t)):
            raise GridError(f"t={t} is not a grid node (h={self.h})")
        if i < -self.m or i > self.n_steps + self.m:
            raise GridError(f"t={t} lies outside [-delta, T+delta]")
        return i

    def col(self, i):
        """Column of state node i in a [-delta, T] array"""
        return i + self.m

    def state_times(self):
        return np.arange(-self.m, self.n_steps + 1) * self.h

    def backward_times(self):
        return np.arange(0, self.n_steps + self.m + 1) * self.h

    def anticipates(self, i):
        """Indicator of [0, T - delta) at node i"""
        return 0 <= i < self.n_steps - self.m

    def describe(self):
        return (
            f"T={self.T} delta={self.delta} m={self.m} "
            f"h={self.h!r} n_steps={self.n_steps}"
        )


def make_grid(T, delta, m):
    """Uniform grid whose step divides the delay exactly"""
    if delta <= 0:
        raise NonPositiveDelay(f"delay must be positive, got {delta}")
    if int(m) != m or m < 1:
        raise GridError(f"steps per delay must be a positive integer, got {m}")
    if T <= delta:
        raise GridError(f"horizon T={T} must exceed the delay {delta}")

    m = int(m)
    h = delta / m
    ratio = T / h
    n_steps = int(round(ratio))
    if abs(ratio - n_steps) > DIVISIBILITY_RTOL * ratio:
        raise NonDivisibleHorizon(
            f"T={T} is not a multiple of h=delta/m={h} (T/h={ratio})"
        )
    return TimeGrid(T=float(T), delta=float(delta), m=m, h=h, n_steps=n_steps)


def _freeze(array):
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class BrownianEnsemble:
    grid: TimeGrid
    increments: np.ndarray
    seed: int
    stream_ids: np.ndarray = field(repr=False)

    @property
    def n_paths(self):
        return self.increments.shape[0]

    def dB(self, i):
        """Increments of cell [t_i, t_{i+1}] for every path"""
        return self.increments[:, i + self.grid.m]

    def terminal_value(self):
        """B(T) with B(0) = 0"""
        g = self.grid
        return self.increments[:, g.m : g.m + g.n_steps].sum(axis=1)

    def path_on_horizon(self):
        """B on the nodes of [0, T]"""
        g = self.grid
        cells = self.increments[:, g.m : g.m + g.n_steps]
        out = np.zeros((self.n_paths, g.n_steps + 1))
        np.cumsum(cells, axis=1, out=out[:, 1:])
        return out

    def coarsen(self, factor):
        """Same Brownian paths on a grid with factor times fewer steps per delay"""
        g = self.grid
        if factor < 1 or g.m % factor:
            raise GridError(f"factor {factor} does not divide m={g.m}")
        coarse = make_grid(g.T, g.delta, g.m // factor)
        blocks = self.increments.reshape(self.n_paths, coarse.n_cells, factor)
        return BrownianEnsemble(
            grid=coarse,
            increments=_freeze(blocks.sum(axis=2)),
            seed=self.seed,
            stream_ids=self.stream_ids,
        )

    def check_grid(self, grid):
        if grid != self.grid:
            raise EnsembleMismatch(
                f"ensemble sampled on [{self.grid.describe()}], "
                f"used with [{grid.describe()}]"
            )


def path_stream(seed, path):
    """Counter-based generator keyed by (seed, path index)"""
    key = ((int(seed) & SEED_MASK) << 64) | int(path)
    return np.random.Generator(np.random.Philox(key=key))


def map_path_chunks(fn, n_paths, workers=1):
    """Apply fn to contiguous path slices and stack the results in path order"""
    workers = max(1, int(workers or 1))
    bounds = np.linspace(0, n_paths, min(workers, n_paths) + 1).astype(int)
    slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if len(slices) == 1:
        return fn(slices[0])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(fn, slices))
    return np.concatenate(parts, axis=0)


def sample_brownian(grid, n_paths, seed, workers=1):
    if n_paths < 1:
        raise ValueError(f"n_paths must be at least 1, got {n_paths}")
    if seed < 0:
        raise ValueError(f"seed must be a non-negative 64-bit integer, got {seed}")

    scale = math.sqrt(grid.h)

    def draw(paths):
        block = np.empty((paths.stop - paths.start, grid.n_cells))
        for row, path in enumerate(range(paths.start, paths.stop)):
            block[row] = path_stream(seed, path).standard_normal(grid.n_cells)
        return block * scale

    increments = map_path_chunks(draw, n_paths, workers)
    return BrownianEnsemble(
        grid=grid,
        increments=_freeze(increments),
        seed=int(seed),
        stream_ids=_freeze(np.arange(n_paths)),
    )


def path_mean(values):
    """Exactly rounded cross-path mean, independent of summation order"""
    values = np.asarray(values, dtype=float).ravel()
    return math.fsum(values) / len(values)


def path_stats(values):
    """(mean, standard error) of a per-path sample"""
    values = np.asarray(values, dtype=float).ravel()
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def node_means(array):
    """Cross-path mean at every column of a (paths, nodes) array"""
    array = np.asarray(array, dtype=float)
    n = array.shape[0]
    return np.array([math.fsum(column) / n for column in array.T])


def node_sds(array):
    array = np.asarray(array, dtype=float)
    n = array.shape[0]
    means = node_means(array)
    if n < 2:
        return np.zeros_like(means)
    return np.array(
        [
            math.sqrt(math.fsum((column - mu) ** 2) / (n - 1))
            for column, mu in zip(array.T, means)
        ]
    )


def basis_size(degree):
    """Number of monomials in two variables up to total degree"""
    return (degree + 1) * (degree + 2) // 2


@dataclass(frozen=True)
class RunConfig:
    T: float = 1.0
    delta: float = 0.5
    steps_per_delay: int = 8
    n_paths: int = 10000
    seed: int = DEFAULT_SEED
    degree: int = 2
    threads: int = 1
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    output_dir: str = "output"

    def __post_init__(self):
        for name, value in self.tolerances.items():
            if not value > 0:
                raise ConfigError(f"core.tolerances.{name}", "must be positive")
        if self.degree < 0:
            raise ConfigError("core.degree", "must be non-negative")
        if self.n_paths < 2 * basis_size(self.degree):
            raise ConfigError(
                "core.n_paths",
                f"need at least {2 * basis_size(self.degree)} paths "
                f"for a degree-{self.degree} basis",
            )
        if self.threads < 1:
            raise ConfigError("core.threads", "must be at least 1")

    @property
    def grid(self):
        return make_grid(self.T, self.delta, self.steps_per_delay)

    def tolerance(self, name):
        return self.tolerances.get(name, DEFAULT_TOLERANCES[name])
