"""Ordered parallel map over independent seed searches.

Work items are evaluated in worker processes that receive the shared,
read-only context once at start-up.  Results come back in input order, so
the output never depends on scheduling.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Sequence

_CONTEXT: Any = None


def available_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


def _init(context: Any) -> None:
    global _CONTEXT
    _CONTEXT = context


def _run_chunk(args):
    fn, chunk = args
    return [fn(_CONTEXT, item) for item in chunk]


def ordered_map(
    fn: Callable[[Any, Any], Any],
    context: Any,
    items: Sequence[Any],
    workers: int = 1,
    chunks_per_worker: int = 4,
) -> list:
    """``[fn(context, item) for item in items]``, optionally across processes.

    ``fn`` must be a module-level function so it can be pickled.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(context, item) for item in items]
    size = max(1, math.ceil(len(items) / (workers * chunks_per_worker)))
    chunks = [items[i : i + size] for i in range(0, len(items), size)]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init, initargs=(context,)) as ex:
        out = []
        for part in ex.map(_run_chunk, [(fn, c) for c in chunks]):
            out.extend(part)
    return out
