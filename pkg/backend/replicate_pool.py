"""
Replicate Pool Module

Seeded random streams and the worker pool that runs independent Monte Carlo
replicates. Every replicate draws from its own stream derived from
(master seed, replicate index), so results never depend on scheduling.
"""

from __future__ import annotations

from typing import Any, Callable, List, Optional, Sequence

import numpy as np
from joblib import Parallel, cpu_count, delayed

try:
    from loguru import logger
except ImportError:
    import logging

    logger = logging.getLogger(__name__)


class ReplicateError(RuntimeError):
    """A replicate failed inside a worker; the message names its index."""

    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"replicate {index} failed: {type(cause).__name__}: {cause}")
        self.index = index


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """
    Independent generator for one replicate.

    Args:
        seed: Master seed of the experiment
        index: Replicate index

    Returns:
        np.random.Generator: stream determined by (seed, index) only
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def derive_seed(seed: int, *keys: int) -> int:
    """Master seed of a sub-experiment, e.g. one value of L."""
    state = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys))
    return int(state.generate_state(1, np.uint64)[0])


class UniformStream:
    """
    Buffered uniforms on [0, 1) drawn from a numpy generator.

    Scalar draws from a Generator are slow in a tight Python loop, so
    uniforms are pulled in blocks and handed out one at a time.
    """

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self.rng = rng
        self.block = block
        self._buffer: List[float] = []
        self._pos = 0

    def uniform(self) -> float:
        if self._pos >= len(self._buffer):
            self._buffer = self.rng.random(self.block).tolist()
            self._pos = 0
        u = self._buffer[self._pos]
        self._pos += 1
        return u


def as_stream(rng) -> UniformStream:
    """Wrap a Generator, or pass an existing UniformStream through."""
    if isinstance(rng, UniformStream):
        return rng
    if isinstance(rng, np.random.Generator):
        return UniformStream(rng)
    raise TypeError(f"expected a numpy Generator or UniformStream, got {type(rng).__name__}")


def default_workers() -> int:
    return max(1, cpu_count())


def _run_chunk(task: Callable[[int], Any], indices: Sequence[int]) -> List[Any]:
    results = []
    for index in indices:
        try:
            results.append(task(index))
        except ReplicateError:
            raise
        except Exception as exc:
            raise ReplicateError(index, exc) from exc
    return results


def map_replicates(
    task: Callable[[int], Any],
    n: int,
    n_jobs: Optional[int] = None,
    chunks_per_worker: int = 4,
) -> List[Any]:
    """
    Run task(index) for index = 0..n-1 and return results in index order.

    Args:
        task: Picklable callable taking a replicate index
        n: Number of replicates
        n_jobs: Worker processes, defaults to the available CPUs
        chunks_per_worker: Chunks handed to each worker

    Returns:
        list: one result per replicate, ordered by index
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    n_jobs = n_jobs or default_workers()
    if n_jobs == 1 or n < 2:
        return _run_chunk(task, range(n))

    n_chunks = min(n, n_jobs * chunks_per_worker)
    bounds = np.linspace(0, n, n_chunks + 1).astype(int)
    logger.debug(f"Dispatching {n} replicates in {n_chunks} chunks over {n_jobs} workers")
    parts = Parallel(n_jobs=n_jobs)(
        delayed(_run_chunk)(task, range(lo, hi)) for lo, hi in zip(bounds[:-1], bounds[1:])
    )
    return [result for part in parts for result in part]
