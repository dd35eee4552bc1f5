"""Small shared helpers."""

from __future__ import annotations

import os


def par_map(fn, items, workers: int | None = None) -> list:
    """Ordered map, optionally over a thread pool. Serial unless workers > 1."""
    items = list(items)
    if not workers or workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def env_workers() -> int:
    """Worker cap from NPC_THREADS; 1 (serial) when unset or malformed."""
    try:
        return max(1, int(os.environ.get("NPC_THREADS", "1")))
    except ValueError:
        return 1
