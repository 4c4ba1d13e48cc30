"""Reproducible random streams and block-parallel execution.

Paths are partitioned into fixed-size blocks.  Block ``b`` of stream ``k``
draws from ``SeedSequence(seed, spawn_key=(k, b))``, so the sample produced
for a given ``(seed, block_size)`` does not depend on how many workers
process the blocks or in which order they finish.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, TypeVar

import numpy as np

T = TypeVar("T")

DEFAULT_BLOCK = 1024

#: stream ids; one per independent use of the same user seed
MAIN = 0
HALVING = 1
SHIFTS = 2


def block_rng(seed: int, block: int, stream: int = MAIN) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(block)))
    return np.random.Generator(np.random.PCG64(ss))


def block_sizes(n: int, block_size: int) -> List[int]:
    if n < 1:
        raise ValueError(f"need at least one path, got n={n}")
    if block_size < 1:
        raise ValueError(f"block_size must be positive, got {block_size}")
    full, rest = divmod(n, block_size)
    return [block_size] * full + ([rest] if rest else [])


def default_workers() -> int:
    return os.cpu_count() or 1


def map_blocks(
    fn: Callable[[np.random.Generator, int, int], T],
    n: int,
    seed: int,
    *,
    stream: int = MAIN,
    block_size: int = DEFAULT_BLOCK,
    workers: Optional[int] = None,
) -> List[T]:
    """Run ``fn(rng, block_index, block_n)`` over all blocks, in block order.

    The returned list is ordered by block index whatever the worker count,
    so any reduction applied to it afterwards is bit-reproducible.
    """
    sizes = block_sizes(n, block_size)

    def task(b: int) -> T:
        return fn(block_rng(seed, b, stream), b, sizes[b])

    workers = default_workers() if workers is None else int(workers)
    if workers <= 1 or len(sizes) == 1:
        return [task(b) for b in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, range(len(sizes))))
