"""Small shared helpers."""

from __future__ import annotations

import os
from collections.abc import Iterator

import numpy as np


def thread_count() -> int:
    """Worker cap for the few parallel sections (ensemble training).
    Controlled by ACE_LAB_THREADS; default 1 keeps everything sequential."""
    raw = os.environ.get("ACE_LAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"ACE_LAB_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def batches(order: np.ndarray, size: int) -> Iterator[np.ndarray]:
    """Consecutive index chunks of at most `size`."""
    for start in range(0, len(order), size):
        yield order[start : start + size]


def smallest_count_at_least(fraction: float, n: int) -> int:
    """Smallest m with m / n >= fraction, robust to float rounding of
    fraction * n landing just above an integer."""
    m = int(np.ceil(fraction * n))
    while m > 0 and (m - 1) / n >= fraction:
        m -= 1
    while m / n < fraction:
        m += 1
    return m
