"""Deterministic worker-capped block parallelism.

Blocks are dispatched to a thread pool but results are reduced in block
order, so outputs are identical for any worker count.  BLAS releases the GIL
inside the dense kernels, which is where the time goes.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

_MAX_THREADS = 0  # 0 = hardware parallelism


def set_max_threads(n: int):
    global _MAX_THREADS
    _MAX_THREADS = max(0, int(n))


def get_max_threads() -> int:
    return _MAX_THREADS if _MAX_THREADS > 0 else (os.cpu_count() or 1)


def map_blocks(fn, blocks):
    """Apply fn to each block; results come back in block order."""
    blocks = list(blocks)
    workers = min(get_max_threads(), len(blocks))
    if workers <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, blocks))
