"""Linear-time grouping of points by Morton box (fixed-grid pseudo-sort).

Points are histogrammed into the dense level-l grid, ranked within their
box, and copied once into box-grouped order. Only the within-box order is
implementation-defined; in deterministic mode it is the input order, which
is identical for every worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import CapacityError, DomainError
from .morton import MAX_LEVEL, box_indices_of_points

DEFAULT_HISTOGRAM_BUDGET = 2 << 30  # bytes


def choose_max_level(n_points: int, cluster_size: int) -> int:
    """Smallest level whose average box occupancy is at most cluster_size."""
    if cluster_size < 1:
        raise DomainError("cluster size must be positive")
    level = 0
    while level < MAX_LEVEL and -(-n_points // (8**level)) > cluster_size:
        level += 1
    return level


def _check_budget(level: int, budget_bytes: int) -> None:
    need = (8**level) * 8
    if need > budget_bytes:
        raise CapacityError(
            f"dense histogram for level {level} needs {need} bytes, "
            f"exceeding the configured budget of {budget_bytes}"
        )


def histogram_and_sort_index(
    points: np.ndarray,
    max_level: int,
    mode: str = "deterministic",
    workers: int = 1,
    histogram_budget_bytes: int = DEFAULT_HISTOGRAM_BUDGET,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Occupancy histogram plus each point's (box, rank-in-box) sort index.

    Returns (bins, boxes, ranks): bins is dense over the 8^max_level grid,
    boxes[i] is point i's Morton index and ranks[i] its slot within the box.
    """
    if max_level < 0 or max_level > MAX_LEVEL:
        raise CapacityError(f"max_level {max_level} outside [0, {MAX_LEVEL}]")
    _check_budget(max_level, histogram_budget_bytes)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    boxes = box_indices_of_points(pts, max_level)
    nbins = 8**max_level
    if mode == "deterministic":
        bins, ranks = backend.kernels.assign_box_ranks(boxes, nbins)
    elif mode == "atomic":
        bins, ranks = backend.kernels.assign_box_ranks_atomic(boxes, nbins, max(1, workers))
    else:
        raise DomainError(f"unknown pseudo-sort mode {mode!r}")
    return bins, boxes, ranks


def build_bookmarks(bins: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Compact the dense histogram to (bookmarks, non-empty box indices).

    bookmarks[i] points at the first sorted point of the i-th non-empty box;
    the final entry is the total point count.
    """
    bins = np.asarray(bins, dtype=np.int64)
    (nz,) = np.nonzero(bins)
    bookmarks = np.zeros(nz.shape[0] + 1, dtype=np.int64)
    np.cumsum(bins[nz], out=bookmarks[1:])
    return bookmarks, nz.astype(np.uint64)


@dataclass
class SortedPointSet:
    """Box-grouped points with bookmarks into the grouped array."""

    level: int
    points: np.ndarray  # (N, 3), grouped by box, boxes ascending
    charges: np.ndarray | None  # (N,) strengths, same order, or None
    permutation: np.ndarray  # sorted position -> original position
    bookmarks: np.ndarray  # (K+1,)
    non_empty_index: np.ndarray  # (K,) ascending Morton indices
    boxes: np.ndarray = field(repr=False, default=None)  # (N,) per sorted point

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    @property
    def num_boxes(self) -> int:
        return self.non_empty_index.shape[0]

    def box_slice(self, ordinal: int) -> slice:
        return slice(self.bookmarks[ordinal], self.bookmarks[ordinal + 1])


def reorder(
    points: np.ndarray,
    charges: np.ndarray | None,
    bins: np.ndarray,
    boxes: np.ndarray,
    ranks: np.ndarray,
    max_level: int,
) -> SortedPointSet:
    """Copy points into box-grouped order using the sort index."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    if boxes.shape[0] != n or ranks.shape[0] != n:
        raise DomainError("points and sort index lengths disagree")
    dense_offsets = np.zeros(bins.shape[0], dtype=np.int64)
    np.cumsum(bins[:-1], out=dense_offsets[1:])
    positions = dense_offsets[boxes] + ranks
    permutation = np.empty(n, dtype=np.int64)
    permutation[positions] = np.arange(n, dtype=np.int64)
    bookmarks, non_empty = build_bookmarks(bins)
    q = None
    if charges is not None:
        q = np.asarray(charges, dtype=np.float64)[permutation]
    return SortedPointSet(
        level=max_level,
        points=pts[permutation],
        charges=q,
        permutation=permutation,
        bookmarks=bookmarks,
        non_empty_index=non_empty,
        boxes=boxes[permutation],
    )


def sort_points(
    points: np.ndarray,
    charges: np.ndarray | None,
    max_level: int,
    mode: str = "deterministic",
    workers: int = 1,
    histogram_budget_bytes: int = DEFAULT_HISTOGRAM_BUDGET,
) -> SortedPointSet:
    """Histogram, bookmark and reorder in one call; frees the dense arrays."""
    bins, boxes, ranks = histogram_and_sort_index(
        points, max_level, mode=mode, workers=workers,
        histogram_budget_bytes=histogram_budget_bytes,
    )
    return reorder(points, charges, bins, boxes, ranks, max_level)
