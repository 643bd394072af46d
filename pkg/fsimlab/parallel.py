"""
parallel.py
===========
Worker pool and seed derivation for independent grid cells and circuits.

Results always come back in input order, and every cell draws from its
own generator keyed on ``(seed, index)``, so the schedule never changes
the output.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional, Sequence, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def derive_rng(seed: Optional[int], index: int | Sequence[int]) -> np.random.Generator:
    """Independent generator for cell *index* of a run seeded with *seed*."""
    if seed is None:
        return np.random.default_rng()
    key = [int(seed)] + ([int(index)] if np.isscalar(index) else [int(i) for i in index])
    return np.random.default_rng(key)


def map_ordered(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """Apply *fn* to every item, optionally on a thread pool.

    ``workers <= 1`` runs inline.  The first exception raised by any
    item propagates after the pool shuts down.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    logger.debug("Dispatching %d tasks to %d workers", len(items), workers)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))
