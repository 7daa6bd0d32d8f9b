"""Seeded Monte Carlo engine shared by the prophet and auction simulators.

Trials are cut into fixed blocks whose size depends only on the width of a
trial.  Block ``b`` draws from its own Philox stream keyed by ``(seed, b)``,
so estimates are identical for any number of worker threads.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from errors import DomainError

__all__ = ["Estimate", "block_generator", "plan_blocks", "run_trials"]

LOG = logging.getLogger("kdpa.montecarlo")

BLOCK_ELEMENTS = 2**20
MAX_BLOCK_TRIALS = 2**16

BlockKernel = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class Estimate:
    """Sample mean of a Monte Carlo metric with its standard error."""

    mean: float
    std_error: float
    trials: int

    def brackets(self, target: float, sigmas: float = 3.0) -> bool:
        """True when *target* lies within ``sigmas`` standard errors of the mean."""

        return abs(self.mean - target) <= sigmas * self.std_error + 1e-12

    def as_dict(self) -> dict[str, float | int]:
        return {"mean": self.mean, "std_error": self.std_error, "trials": self.trials}


def block_generator(seed: int, block: int) -> np.random.Generator:
    """Independent counter-based stream for block *block* of run *seed*."""

    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(block,))
    return np.random.Generator(np.random.Philox(sequence))


def plan_blocks(trials: int, width: int) -> list[tuple[int, int]]:
    """Split *trials* into ``(block_index, count)`` pairs for trials of *width* draws."""

    size = max(1, min(MAX_BLOCK_TRIALS, BLOCK_ELEMENTS // max(1, width)))
    return [(index, min(size, trials - start)) for index, start in enumerate(range(0, trials, size))]


def _summarise(samples: np.ndarray) -> tuple[int, np.ndarray, np.ndarray]:
    count = samples.shape[0]
    mean = samples.mean(axis=0)
    m2 = ((samples - mean) ** 2).sum(axis=0)
    return count, mean, m2


def run_trials(
    kernel: BlockKernel,
    trials: int,
    seed: int,
    *,
    width: int,
    threads: int = 1,
) -> list[Estimate]:
    """Run *kernel* over all blocks and return one :class:`Estimate` per metric column.

    ``kernel(rng, count)`` returns an array of shape ``(count,)`` or
    ``(count, metrics)``.  Block summaries are merged in block order.
    """

    if trials < 1:
        raise DomainError(f"trials must be at least 1 (got {trials})")
    blocks = plan_blocks(trials, width)

    def run_block(spec: tuple[int, int]) -> tuple[int, np.ndarray, np.ndarray]:
        index, count = spec
        samples = np.asarray(kernel(block_generator(seed, index), count), dtype=float)
        return _summarise(samples.reshape(count, -1))

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(run_block, blocks))
    else:
        partials = [run_block(spec) for spec in blocks]
    LOG.debug("Ran %d trials in %d blocks (threads=%d)", trials, len(blocks), threads)

    total, mean, m2 = partials[0]
    for count, block_mean, block_m2 in partials[1:]:
        merged = total + count
        delta = block_mean - mean
        mean = mean + delta * (count / merged)
        m2 = m2 + block_m2 + delta**2 * (total * count / merged)
        total = merged

    estimates = []
    for column_mean, column_m2 in zip(np.atleast_1d(mean), np.atleast_1d(m2)):
        variance = column_m2 / (total - 1) if total > 1 else 0.0
        std_error = math.sqrt(max(variance, 0.0) / total)
        estimates.append(Estimate(mean=float(column_mean), std_error=std_error, trials=total))
    return estimates
