"""Prefix-sum and stream-compaction primitives.

The scan runs blocked: workers fold contiguous chunks, the few chunk totals
are scanned serially, then chunk offsets are applied. Integer addition is
associative, so the result is bit-identical for every worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import CapacityError, DomainError

_INT64_GUARD = float(2**62)


def _chunk_bounds(n: int, workers: int) -> list[tuple[int, int]]:
    workers = max(1, min(workers, n)) if n else 1
    size = -(-n // workers)
    return [(i, min(i + size, n)) for i in range(0, n, size)] or [(0, 0)]


def exclusive_scan(values: np.ndarray, workers: int = 1) -> tuple[np.ndarray, int]:
    """Exclusive prefix sum plus the inclusive total.

    out[0] = 0, out[i] = out[i-1] + values[i-1]; the output has the input's
    length.
    """
    a = np.asarray(values)
    if a.ndim != 1 or a.shape[0] == 0:
        raise DomainError("scan input must be a non-empty 1-d array")
    if np.any(a < 0):
        raise DomainError("scan input must be non-negative")
    if float(np.sum(a, dtype=np.float64)) > _INT64_GUARD:
        raise CapacityError("scan total would overflow the 64-bit accumulator")
    a = a.astype(np.int64, copy=False)
    out = np.empty_like(a)
    bounds = _chunk_bounds(a.shape[0], workers)

    def fold(chunk):
        lo, hi = chunk
        np.cumsum(a[lo:hi], out=out[lo:hi])

    if len(bounds) > 1 and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fold, bounds))
    else:
        for b in bounds:
            fold(b)

    offset = 0
    offsets = []
    for lo, hi in bounds:
        offsets.append(offset)
        offset += int(out[hi - 1]) if hi > lo else 0
    total = offset

    def shift(args):
        (lo, hi), off = args
        # inclusive -> exclusive with the chunk offset applied
        out[lo + 1 : hi] = out[lo : hi - 1] + off
        out[lo] = off

    jobs = list(zip(bounds, offsets))
    if len(bounds) > 1 and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(shift, reversed(jobs)))
    else:
        for job in reversed(jobs):
            shift(job)
    return out, total


def compact_flags(flags: np.ndarray, workers: int = 1) -> tuple[np.ndarray, int]:
    """Ranks of flagged entries via scan; count is the number of ones."""
    f = np.asarray(flags)
    if not np.all((f == 0) | (f == 1)):
        raise DomainError("compact_flags input must be binary")
    return exclusive_scan(f, workers=workers)
