"""Splitting chain batches across worker threads."""

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, TypeVar

from bp_layer import log

T = TypeVar("T")


def default_workers() -> int:
    return os.cpu_count() or 1


def split_rows(total: int, parts: int) -> List[slice]:
    """Cut ``range(total)`` into ``parts`` contiguous, nearly equal slices."""
    parts = max(1, min(parts, total))
    bounds = [total * k // parts for k in range(parts + 1)]
    return [slice(bounds[k], bounds[k + 1]) for k in range(parts)]


def run_split(task: Callable[[slice], T], total: int, workers: int = 1) -> List[T]:
    """Run ``task`` on disjoint row slices, in order.

    Each call works on its own slice and returns its own result; merging
    happens in the caller once the pool has joined.
    """
    if workers <= 1 or total < 2:
        return [task(slice(0, total))]
    slices = split_rows(total, workers)
    log.debug(f"Running {len(slices)} chain slices on {workers} workers...")
    with ThreadPoolExecutor(
        max_workers=len(slices), thread_name_prefix="ChainWorker"
    ) as pool:
        return list(pool.map(task, slices))
