"""Path-ensemble plumbing shared by the cost, oracle and Monte Carlo modules.

Path ``i`` is always drawn from the substream keyed by ``(seed, i)``, and
chunks are reassembled in path order, so results do not depend on the chunk
size or the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .models import PriceModel, TimeGrid


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n_paths: int
    seed: int | None = None

    @classmethod
    def from_samples(cls, samples, seed=None) -> "MCEstimate":
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        if n < 2:
            raise ValueError("an estimate needs at least two samples")
        return cls(float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(n)), n, seed)

    def z_score(self, target: float = 0.0) -> float:
        diff = self.mean - target
        if self.stderr == 0:
            return 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return diff / self.stderr

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_paths": self.n_paths, "seed": self.seed}


@dataclass(frozen=True)
class MCConfig:
    """Ensemble size, seed and resolution for simulation-backed operations."""

    n_paths: int = 10_000
    seed: int = 0
    n_steps: int = 500
    threads: int = 1
    chunk_size: int = 4096

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("n_paths must be >= 2")
        if self.n_steps < 2:
            raise ValueError("n_steps must be >= 2")
        if self.threads < 1 or self.chunk_size < 1:
            raise ValueError("threads and chunk_size must be >= 1")


def map_paths(fn, model: PriceModel, grid: TimeGrid, n_paths: int, seed: int,
              threads: int = 1, chunk_size: int = 4096) -> np.ndarray:
    """Evaluate ``fn(prices)`` chunk by chunk; concatenate along the path axis.

    ``fn`` maps an array of shape (chunk, n+1) to an array whose first axis is
    the chunk.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    starts = range(0, n_paths, chunk_size)

    def work(start):
        count = min(chunk_size, n_paths - start)
        return np.asarray(fn(model.sample(grid, count, seed, start=start)))

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    return np.concatenate(parts, axis=0)
