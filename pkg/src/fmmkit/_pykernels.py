"""Pure-numpy kernel implementations.

Fallback backend used when the compiled extension is unavailable (and the
reference the compiled kernels are tested against). All functions are
deterministic; see `backend` for selection.
"""

from __future__ import annotations

import numpy as np

IS_COMPILED = False

_M21 = np.uint64(0x1FFFFF)
_S1 = np.uint64(0x1F00000000FFFF)
_S2 = np.uint64(0x1F0000FF0000FF)
_S3 = np.uint64(0x100F00F00F00F00F)
_S4 = np.uint64(0x10C30C30C30C30C3)
_S5 = np.uint64(0x1249249249249249)


def spread_bits(v: np.ndarray) -> np.ndarray:
    """Insert two zero bits between each of the low 21 bits."""
    v = v & _M21
    v = (v | (v << np.uint64(32))) & _S1
    v = (v | (v << np.uint64(16))) & _S2
    v = (v | (v << np.uint64(8))) & _S3
    v = (v | (v << np.uint64(4))) & _S4
    v = (v | (v << np.uint64(2))) & _S5
    return v


def compact_bits(v: np.ndarray) -> np.ndarray:
    v = v & _S5
    v = (v | (v >> np.uint64(2))) & _S4
    v = (v | (v >> np.uint64(4))) & _S3
    v = (v | (v >> np.uint64(8))) & _S2
    v = (v | (v >> np.uint64(16))) & _S1
    v = (v | (v >> np.uint64(32))) & _M21
    return v


def interleave_coords(ix: np.ndarray, iy: np.ndarray, iz: np.ndarray) -> np.ndarray:
    return (
        spread_bits(ix.astype(np.uint64))
        | (spread_bits(iy.astype(np.uint64)) << np.uint64(1))
        | (spread_bits(iz.astype(np.uint64)) << np.uint64(2))
    )


def deinterleave_indices(idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    idx = np.asarray(idx, dtype=np.uint64)
    return (
        compact_bits(idx),
        compact_bits(idx >> np.uint64(1)),
        compact_bits(idx >> np.uint64(2)),
    )


def encode_points(x: np.ndarray, y: np.ndarray, z: np.ndarray, level: int) -> np.ndarray:
    """Morton index of the level-`level` box containing each point.

    Coordinates exactly on the upper domain boundary clamp into the last box.
    """
    n = 1 << level
    hi = n - 1
    ix = np.minimum(np.floor(x * n).astype(np.int64), hi)
    iy = np.minimum(np.floor(y * n).astype(np.int64), hi)
    iz = np.minimum(np.floor(z * n).astype(np.int64), hi)
    return interleave_coords(ix, iy, iz)


def assign_box_ranks(boxes: np.ndarray, nbins: int) -> tuple[np.ndarray, np.ndarray]:
    """Occupancy histogram plus each point's arrival rank within its box.

    Equivalent to a single sequential pass with a per-box counter: ranks
    within a box follow input order. numpy's stable integer argsort is a
    radix sort, so this stays linear in the number of points.
    """
    boxes = np.ascontiguousarray(boxes, dtype=np.uint64)
    bins = np.bincount(boxes, minlength=nbins).astype(np.int64)
    order = np.argsort(boxes, kind="stable")
    starts = np.zeros(nbins + 1, dtype=np.int64)
    np.cumsum(bins, out=starts[1:])
    ranks = np.empty(boxes.shape[0], dtype=np.int64)
    ranks[order] = np.arange(boxes.shape[0], dtype=np.int64) - starts[boxes[order]]
    return bins, ranks


def assign_box_ranks_atomic(
    boxes: np.ndarray, nbins: int, threads: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    # Shared-counter semantics need the compiled core; the deterministic
    # result is a legal ordering of the same contract.
    return assign_box_ranks(boxes, nbins)


def _segments_from_candidates(
    cand: np.ndarray, valid: np.ndarray, src_boxes: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shared tail of the neighbor/stencil builders.

    cand: (B, k) uint64 candidate box indices, valid: same-shape bool.
    Returns (bookmark, flat ranks into src_boxes, keep mask in row-sorted order).
    """
    sentinel = np.uint64(0xFFFFFFFFFFFFFFFF)
    work = np.where(valid, cand, sentinel)
    sort_idx = np.argsort(work, axis=1, kind="stable")
    work = np.take_along_axis(work, sort_idx, axis=1)
    pos = np.searchsorted(src_boxes, work)
    found = pos < src_boxes.shape[0]
    safe = np.where(found, pos, 0)
    found &= src_boxes[safe] == work
    counts = found.sum(axis=1)
    bookmark = np.zeros(cand.shape[0] + 1, dtype=np.int64)
    np.cumsum(counts, out=bookmark[1:])
    flat = pos[found].astype(np.int64)
    return bookmark, flat, (found, sort_idx)


_ADJ_OFFSETS = np.array(
    [(dx, dy, dz) for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)],
    dtype=np.int64,
)

_STENCIL_OFFSETS = np.array(
    [(dx, dy, dz) for dz in range(-2, 4) for dy in range(-2, 4) for dx in range(-2, 4)],
    dtype=np.int64,
)


def adjacent_segments(
    recv_boxes: np.ndarray, src_boxes: np.ndarray, level: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per receiver box, the non-empty source boxes in its 3x3x3 neighborhood.

    Both inputs are sorted Morton index arrays at the same level; the output
    lists ranks into `src_boxes`, ascending within each segment.
    """
    if recv_boxes.shape[0] == 0:
        return np.zeros(1, dtype=np.int64), np.empty(0, dtype=np.int64)
    n = 1 << level
    ix, iy, iz = deinterleave_indices(recv_boxes)
    cx = ix.astype(np.int64)[:, None] + _ADJ_OFFSETS[:, 0][None, :]
    cy = iy.astype(np.int64)[:, None] + _ADJ_OFFSETS[:, 1][None, :]
    cz = iz.astype(np.int64)[:, None] + _ADJ_OFFSETS[:, 2][None, :]
    valid = (
        (cx >= 0) & (cx < n) & (cy >= 0) & (cy < n) & (cz >= 0) & (cz < n)
    )
    cand = interleave_coords(
        np.clip(cx, 0, n - 1), np.clip(cy, 0, n - 1), np.clip(cz, 0, n - 1)
    )
    bookmark, flat, _ = _segments_from_candidates(cand, valid, src_boxes)
    return bookmark, flat


def stencil_segments(
    recv_boxes: np.ndarray, src_boxes: np.ndarray, level: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per receiver box: non-empty source boxes in the translation stencil.

    The stencil is the parent-neighborhood children minus the box's own
    3x3x3 neighborhood. Returns (bookmark, ranks into src_boxes, offset
    codes). An offset code packs the integer coordinate offset src - recv,
    each component in [-3, 3], as (dx+3) + 7*(dy+3) + 49*(dz+3).
    """
    if level < 2 or recv_boxes.shape[0] == 0:
        return (
            np.zeros(recv_boxes.shape[0] + 1, dtype=np.int64),
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int16),
        )
    n = 1 << level
    ix, iy, iz = deinterleave_indices(recv_boxes)
    ix = ix.astype(np.int64)
    iy = iy.astype(np.int64)
    iz = iz.astype(np.int64)
    bx = 2 * (ix >> 1)
    by = 2 * (iy >> 1)
    bz = 2 * (iz >> 1)
    cx = bx[:, None] + _STENCIL_OFFSETS[:, 0][None, :]
    cy = by[:, None] + _STENCIL_OFFSETS[:, 1][None, :]
    cz = bz[:, None] + _STENCIL_OFFSETS[:, 2][None, :]
    dx = cx - ix[:, None]
    dy = cy - iy[:, None]
    dz = cz - iz[:, None]
    near = (np.abs(dx) <= 1) & (np.abs(dy) <= 1) & (np.abs(dz) <= 1)
    valid = (
        (cx >= 0) & (cx < n) & (cy >= 0) & (cy < n) & (cz >= 0) & (cz < n) & ~near
    )
    cand = interleave_coords(
        np.clip(cx, 0, n - 1), np.clip(cy, 0, n - 1), np.clip(cz, 0, n - 1)
    )
    codes = ((dx + 3) + 7 * (dy + 3) + 49 * (dz + 3)).astype(np.int16)
    bookmark, flat, (found, sort_idx) = _segments_from_candidates(cand, valid, src_boxes)
    codes = np.take_along_axis(codes, sort_idx, axis=1)[found]
    return bookmark, flat, codes


def near_field(
    sx: np.ndarray,
    sy: np.ndarray,
    sz: np.ndarray,
    sq: np.ndarray,
    src_bookmark: np.ndarray,
    nbr_bookmark: np.ndarray,
    nbr_list: np.ndarray,
    rx: np.ndarray,
    ry: np.ndarray,
    rz: np.ndarray,
    recv_bookmark: np.ndarray,
) -> np.ndarray:
    """Direct kernel sums over each receiver box's gathered neighborhood.

    Sources are gathered into one contiguous block per receiver box before a
    single reduction, so the accumulation tree matches `direct_potentials`
    run on the pseudo-sorted source array.
    """
    phi = np.zeros(rx.shape[0], dtype=np.float64)
    for j in range(recv_bookmark.shape[0] - 1):
        segs = nbr_list[nbr_bookmark[j] : nbr_bookmark[j + 1]]
        if segs.shape[0] == 0:
            continue
        gather = np.concatenate(
            [np.arange(src_bookmark[v], src_bookmark[v + 1]) for v in segs]
        )
        r0, r1 = recv_bookmark[j], recv_bookmark[j + 1]
        dx = rx[r0:r1, None] - sx[gather][None, :]
        dy = ry[r0:r1, None] - sy[gather][None, :]
        dz = rz[r0:r1, None] - sz[gather][None, :]
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        with np.errstate(divide="ignore"):
            contrib = sq[gather][None, :] / dist
        contrib[dist == 0.0] = 0.0
        phi[r0:r1] = np.sum(contrib, axis=1)
    return phi


def direct_potentials(
    sx: np.ndarray,
    sy: np.ndarray,
    sz: np.ndarray,
    sq: np.ndarray,
    rx: np.ndarray,
    ry: np.ndarray,
    rz: np.ndarray,
    chunk: int = 1024,
) -> np.ndarray:
    """Brute-force kernel sums, skipping exactly coincident pairs.

    Chunked over receivers only, so each receiver's reduction tree is
    independent of the chunk size.
    """
    nr = rx.shape[0]
    phi = np.empty(nr, dtype=np.float64)
    for start in range(0, nr, chunk):
        end = min(start + chunk, nr)
        dx = rx[start:end, None] - sx[None, :]
        dy = ry[start:end, None] - sy[None, :]
        dz = rz[start:end, None] - sz[None, :]
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        with np.errstate(divide="ignore"):
            contrib = sq[None, :] / dist
        contrib[dist == 0.0] = 0.0
        phi[start:end] = np.sum(contrib, axis=1)
    return phi
