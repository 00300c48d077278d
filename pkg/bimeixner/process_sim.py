"""Simulation of the randomized process Y and of the stitched process Z.

Paths are generated in fixed-size blocks. Block ``k`` draws from its own
Philox stream seeded by ``SeedSequence(seed, spawn_key=(k,))`` and blocks are
concatenated in order, so a batch depends only on (seed, config, grid, N),
never on how many worker threads produced it.
"""

import logging
import math
import os
import threading
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import nef_family, randomization
from .errors import ArgumentError, GridError

logger = logging.getLogger(__name__)

BLOCK_SIZE = 8192
GRID_ATOL = 1e-12


class TimeSide(str, Enum):
    PRE = "pre"
    POST = "post"


class ProcessTag(str, Enum):
    Y = "Y"
    Z = "Z"


def time_map(t, r, side):
    """Pre side: s' = r s/(1-s) on (0,1). Post side: u' = r/(u-1) on (1,inf)."""
    side = TimeSide(side)
    t, r = float(t), float(r)
    if not r > 0.0:
        raise ArgumentError(f"time map needs r > 0, got {r}")
    if side is TimeSide.PRE:
        if not 0.0 < t < 1.0:
            raise ArgumentError(f"pre-side time map needs 0 < t < 1, got {t}")
        return r * t / (1.0 - t)
    if not t > 1.0 or math.isinf(t):
        raise ArgumentError(f"post-side time map needs 1 < t < inf, got {t}")
    return r / (t - 1.0)


def inverse_time_map(mapped, r, side):
    side = TimeSide(side)
    mapped, r = float(mapped), float(r)
    if not (mapped > 0.0 and r > 0.0):
        raise ArgumentError(f"inverse time map needs positive arguments, got ({mapped}, {r})")
    if side is TimeSide.PRE:
        return mapped / (r + mapped)
    return 1.0 + r / mapped


@dataclass(frozen=True)
class TimeGrid:
    times: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if not times:
            raise ArgumentError("time grid is empty")
        if not all(math.isfinite(t) and t > 0.0 for t in times):
            raise ArgumentError(f"grid times must be finite and positive, got {times}")
        if any(b <= a for a, b in zip(times[:-1], times[1:])):
            raise ArgumentError(f"grid times must be strictly increasing, got {times}")
        object.__setattr__(self, "times", times)

    @classmethod
    def covering(cls, times):
        """Smallest grid holding every time in ``times`` (duplicates merged)."""
        return cls(tuple(sorted({float(t) for t in times})))

    @property
    def contains_one(self):
        return 1.0 in self.times

    def __len__(self):
        return len(self.times)

    def index_of(self, t):
        for i, time in enumerate(self.times):
            if abs(time - t) <= GRID_ATOL * max(1.0, abs(t)):
                return i
        raise GridError(f"time {t} is not a point of the grid {self.times}")


@dataclass(frozen=True)
class StitchConfig:
    family: nef_family.FamilySpec
    p: float
    r: float
    m: float
    v: float
    law: randomization.RandomizationLaw

    @classmethod
    def from_law(cls, law, check=True):
        moments = randomization.kprime_moments(law)
        if not moments.variance > 0.0:
            raise ArgumentError(f"var(kappa'(Theta)) must be positive, got {moments.variance}")
        if check:
            report = randomization.check_assumptions(law.family, law.p, law.r)
            if not report.passed:
                failed = report.failures[0]
                raise ArgumentError(
                    f"boundary condition '{failed.condition}' fails for {law.family} at "
                    f"(p={law.p}, r={law.r}), x={failed.support_point}, theta -> {failed.endpoint}"
                )
        return cls(law.family, law.p, law.r, law.p / law.r, moments.std, law)

    @classmethod
    def create(cls, family, p, r, check=True):
        return cls.from_law(randomization.RandomizationLaw.create(family, p, r), check=check)


@dataclass(frozen=True)
class ZIngredients:
    """Y and Y' values behind each Z entry, aligned with the Z grid columns.

    ``y_pre`` is NaN outside the pre-side columns and ``y_post`` outside the
    post-side ones; ``pre_times``/``post_times`` hold the mapped times.
    """

    y_pre: np.ndarray
    y_post: np.ndarray
    kprime: np.ndarray
    pre_times: tuple
    post_times: tuple


@dataclass(frozen=True)
class PathBatch:
    grid: TimeGrid
    values: np.ndarray
    thetas: np.ndarray
    seed: int
    process_tag: ProcessTag
    family: nef_family.FamilySpec
    p: float
    r: float
    ingredients: ZIngredients = None

    @property
    def n_paths(self):
        return self.values.shape[0]

    def column(self, t):
        return self.values[:, self.grid.index_of(t)]

    def kprime(self):
        return nef_family.kappa_prime(self.family, self.thetas)

    def pre_ingredient(self, s):
        """(s', Y_{s'}) for a pre-side grid time s."""
        index = self.grid.index_of(s)
        if self.ingredients is None or not s < 1.0:
            raise GridError(f"no pre-side ingredient at time {s}")
        return self.ingredients.pre_times[index], self.ingredients.y_pre[:, index]

    def post_ingredient(self, u):
        """(u', Y'_{u'}) for a post-side grid time u."""
        index = self.grid.index_of(u)
        if self.ingredients is None or not u > 1.0:
            raise GridError(f"no post-side ingredient at time {u}")
        return self.ingredients.post_times[index], self.ingredients.y_post[:, index]


def block_rng(seed, block):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _block_sizes(n_paths, block_size):
    full, rest = divmod(n_paths, block_size)
    return [block_size] * full + ([rest] if rest else [])


def _resolve_threads(threads, n_blocks):
    if threads is None or threads <= 0:
        threads = os.cpu_count() or 1
    return max(1, min(int(threads), n_blocks))


def run_blocks(n_paths, seed, simulate_block, threads=0, block_size=BLOCK_SIZE):
    """Run ``simulate_block(rng, size)`` over all blocks; returns results in block order."""
    if n_paths < 1:
        raise ArgumentError(f"n_paths must be at least 1, got {n_paths}")
    sizes = _block_sizes(int(n_paths), int(block_size))
    n_threads = _resolve_threads(threads, len(sizes))
    logger.info("Simulating %d paths in %d blocks on %d threads", n_paths, len(sizes), n_threads)

    results = {}
    failures = {}

    def worker(offset):
        for block in range(offset, len(sizes), n_threads):
            try:
                results[block] = simulate_block(block_rng(seed, block), sizes[block])
            except Exception as exc:
                failures[block] = exc
                return

    if n_threads == 1:
        worker(0)
    else:
        workers = []
        for offset in range(n_threads):
            thread = threading.Thread(target=worker, args=(offset,))
            workers.append(thread)
            thread.start()
        for thread in workers:
            thread.join()

    if failures:
        raise failures[min(failures)]
    return [results[block] for block in range(len(sizes))]


def _cumulative_increments(family, thetas, times, rng):
    """Y at the increasing ``times`` given per-path tilts; shape (len(thetas), len(times))."""
    out = np.empty((thetas.size, len(times)))
    level = np.zeros(thetas.size)
    previous = 0.0
    for j, time in enumerate(times):
        level = level + nef_family.increment_samples(family, thetas, time - previous, rng)
        out[:, j] = level
        previous = time
    return out


def simulate_y(family, p, r, grid, n_paths, seed, threads=0, block_size=BLOCK_SIZE):
    """N paths of the randomized process Y on ``grid``; Y_0 = 0 is implicit."""
    law = randomization.RandomizationLaw.create(family, p, r)

    def simulate_block(rng, size):
        thetas = randomization.sample_theta(law, rng, size)
        return thetas, _cumulative_increments(family, thetas, grid.times, rng)

    blocks = run_blocks(n_paths, seed, simulate_block, threads, block_size)
    thetas = np.concatenate([block[0] for block in blocks])
    values = np.concatenate([block[1] for block in blocks])
    return PathBatch(grid, values, thetas, int(seed), ProcessTag.Y, family, law.p, law.r)


def simulate_z(config, grid, n_paths, seed, threads=0, block_size=BLOCK_SIZE):
    """N paths of the stitched process Z on ``grid``.

    Times below 1 read an Y path at s' = r s/(1-s), the time 1 reads
    kappa'(Theta), and times above 1 read an independent Y' path (same Theta)
    at u' = r/(u-1), simulated in increasing u' order.
    """
    if not config.v > 0.0:
        raise ArgumentError(f"stitching needs v > 0, got {config.v}")
    family, p, r, v = config.family, config.p, config.r, config.v
    pre_cols = [j for j, t in enumerate(grid.times) if t < 1.0]
    post_cols = [j for j, t in enumerate(grid.times) if t > 1.0]
    one_cols = [j for j, t in enumerate(grid.times) if t == 1.0]
    pre_mapped = [time_map(grid.times[j], r, TimeSide.PRE) for j in pre_cols]
    post_mapped = [time_map(grid.times[j], r, TimeSide.POST) for j in post_cols]
    # grid order is decreasing in u'; Y' is built along increasing u'
    post_order = sorted(range(len(post_cols)), key=lambda k: post_mapped[k])
    n_cols = len(grid)

    def simulate_block(rng, size):
        thetas = randomization.sample_theta(config.law, rng, size)
        kprime = nef_family.kappa_prime(family, thetas)
        z = np.empty((size, n_cols))
        y_pre = np.full((size, n_cols), np.nan)
        y_post = np.full((size, n_cols), np.nan)
        if pre_cols:
            y = _cumulative_increments(family, thetas, pre_mapped, rng)
            for k, j in enumerate(pre_cols):
                t = grid.times[j]
                y_pre[:, j] = y[:, k]
                z[:, j] = (1.0 - t) / (r * v) * y[:, k] - t * p / (r * v)
        for j in one_cols:
            z[:, j] = (kprime - p / r) / v
        if post_cols:
            y_prime = _cumulative_increments(
                family, thetas, [post_mapped[k] for k in post_order], rng,
            )
            for position, k in enumerate(post_order):
                j = post_cols[k]
                u = grid.times[j]
                y_post[:, j] = y_prime[:, position]
                z[:, j] = (u - 1.0) / (r * v) * y_prime[:, position] - p / (r * v)
        return thetas, z, y_pre, y_post, kprime

    blocks = run_blocks(n_paths, seed, simulate_block, threads, block_size)
    parts = [np.concatenate([block[i] for block in blocks]) for i in range(5)]
    thetas, values, y_pre, y_post, kprime = parts

    pre_times = [math.nan] * n_cols
    post_times = [math.nan] * n_cols
    for k, j in enumerate(pre_cols):
        pre_times[j] = pre_mapped[k]
    for k, j in enumerate(post_cols):
        post_times[j] = post_mapped[k]
    ingredients = ZIngredients(y_pre, y_post, kprime, tuple(pre_times), tuple(post_times))
    return PathBatch(grid, values, thetas, int(seed), ProcessTag.Z, family, p, r, ingredients)
