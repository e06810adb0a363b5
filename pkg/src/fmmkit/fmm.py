"""Laplace-kernel evaluation engine: brute-force reference plus the
hierarchical pipeline (expand, shift up, translate, shift down, evaluate)
driven entirely by the interaction lists.
"""

from __future__ import annotations

import numpy as np

from . import backend
from .errors import DomainError
from .expansions import OperatorCache, eval_regular_packed, packed_degrees
from .lists import FmmStructures
from .morton import box_centers
from .pseudosort import SortedPointSet

MAX_ORDER = 24
_P2M_CHUNK = 262144  # points per expansion-evaluation block


def direct_sum(
    src_points: np.ndarray, charges: np.ndarray, recv_points: np.ndarray
) -> np.ndarray:
    """phi[j] = sum_i q_i / |y_j - x_i|, skipping exactly coincident pairs."""
    s = np.ascontiguousarray(src_points, dtype=np.float64).reshape(-1, 3)
    r = np.ascontiguousarray(recv_points, dtype=np.float64).reshape(-1, 3)
    q = np.ascontiguousarray(charges, dtype=np.float64)
    return backend.kernels.direct_potentials(
        s[:, 0], s[:, 1], s[:, 2], q, r[:, 0], r[:, 1], r[:, 2]
    )


def _check_order(p: int) -> None:
    if not 1 <= p <= MAX_ORDER:
        raise DomainError(f"truncation number must be in [1, {MAX_ORDER}], got {p}")


def _per_point_centers(ps: SortedPointSet) -> np.ndarray:
    centers = box_centers(ps.non_empty_index, ps.level)
    lengths = np.diff(ps.bookmarks)
    return np.repeat(centers, lengths, axis=0)


def particles_to_multipoles(sorted_src: SortedPointSet, p: int) -> np.ndarray:
    """Packed multipole coefficients per non-empty source box at the finest level."""
    _check_order(p)
    K = sorted_src.num_boxes
    out = np.zeros((K, p * p), dtype=np.float64)
    if K == 0:
        return out
    centers_pt = _per_point_centers(sorted_src)
    q = sorted_src.charges
    if q is None:
        q = np.ones(sorted_src.num_points)
    bookmarks = sorted_src.bookmarks
    n = sorted_src.num_points
    # block over whole boxes so each reduceat segment stays within one block
    b0 = 0
    while b0 < K:
        b1 = b0
        while b1 < K and bookmarks[b1 + 1] - bookmarks[b0] <= _P2M_CHUNK:
            b1 += 1
        b1 = max(b1, b0 + 1)
        lo, hi = bookmarks[b0], bookmarks[b1]
        rel = sorted_src.points[lo:hi] - centers_pt[lo:hi]
        vals = eval_regular_packed(rel, p) * q[lo:hi, None]
        out[b0:b1] = np.add.reduceat(vals, bookmarks[b0:b1] - lo, axis=0)
        b0 = b1
    return out


def shift_multipoles_up(
    child_boxes: np.ndarray,
    m_child: np.ndarray,
    parent_boxes: np.ndarray,
    child_level: int,
    ops: OperatorCache,
) -> np.ndarray:
    """Accumulate child multipoles into their parents (one level step)."""
    p = ops.p
    deg = ops.degrees
    h = 0.5**child_level
    d_in = h ** (-deg.astype(np.float64))
    d_out = h ** deg.astype(np.float64)
    out = np.zeros((parent_boxes.shape[0], p * p), dtype=np.float64)
    parent_rank = np.searchsorted(parent_boxes, child_boxes >> np.uint64(3))
    octant = (child_boxes & np.uint64(7)).astype(np.int64)
    for oct_digit in range(8):
        sel = octant == oct_digit
        if not np.any(sel):
            continue
        mat = ops.multipole_shift(oct_digit)
        out[parent_rank[sel]] += ((m_child[sel] * d_in) @ mat.T) * d_out
    return out


def translate_level(
    m_level: np.ndarray,
    stencil_bookmark: np.ndarray,
    stencil_ranks: np.ndarray,
    stencil_codes: np.ndarray,
    num_recv_boxes: int,
    level: int,
    ops: OperatorCache,
) -> np.ndarray:
    """Multipole-to-local translations for one level, grouped by offset."""
    p = ops.p
    out = np.zeros((num_recv_boxes, p * p), dtype=np.float64)
    if stencil_ranks.shape[0] == 0:
        return out
    deg = ops.degrees.astype(np.float64)
    h = 0.5**level
    d_in = h ** (-deg)
    d_out = h ** (-(deg + 1.0))
    recv_rows = np.repeat(
        np.arange(num_recv_boxes, dtype=np.int64), np.diff(stencil_bookmark)
    )
    order = np.argsort(stencil_codes, kind="stable")
    codes_sorted = stencil_codes[order]
    boundaries = np.flatnonzero(np.diff(codes_sorted)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [codes_sorted.shape[0]]])
    for lo, hi in zip(starts, ends):
        grp = order[lo:hi]
        mat = ops.multipole_to_local(int(codes_sorted[lo]))
        scaled = m_level[stencil_ranks[grp]] * d_in
        out[recv_rows[grp]] += (scaled @ mat.T) * d_out
    return out


def shift_locals_down(
    parent_boxes: np.ndarray,
    l_parent: np.ndarray,
    child_boxes: np.ndarray,
    child_level: int,
    ops: OperatorCache,
) -> np.ndarray:
    """Propagate parent local expansions to the child centers."""
    p = ops.p
    deg = ops.degrees.astype(np.float64)
    h = 0.5**child_level
    d_in = h**deg
    d_out = h ** (-deg)
    out = np.zeros((child_boxes.shape[0], p * p), dtype=np.float64)
    parent_rank = np.searchsorted(parent_boxes, child_boxes >> np.uint64(3))
    octant = (child_boxes & np.uint64(7)).astype(np.int64)
    for oct_digit in range(8):
        sel = octant == oct_digit
        if not np.any(sel):
            continue
        mat = ops.local_shift(oct_digit)
        out[sel] = ((l_parent[parent_rank[sel]] * d_in) @ mat.T) * d_out
    return out


def locals_to_potentials(sorted_recv: SortedPointSet, l_finest: np.ndarray, p: int) -> np.ndarray:
    """Evaluate the finest-level local expansions at every sorted receiver."""
    n = sorted_recv.num_points
    phi = np.empty(n, dtype=np.float64)
    if n == 0:
        return phi
    centers_pt = _per_point_centers(sorted_recv)
    lengths = np.diff(sorted_recv.bookmarks)
    rows = np.repeat(np.arange(sorted_recv.num_boxes), lengths)
    for lo in range(0, n, _P2M_CHUNK):
        hi = min(lo + _P2M_CHUNK, n)
        rel = sorted_recv.points[lo:hi] - centers_pt[lo:hi]
        basis = eval_regular_packed(rel, p)
        phi[lo:hi] = np.einsum("ij,ij->i", basis, l_finest[rows[lo:hi]])
    return phi


def near_field_potentials(structures: FmmStructures) -> np.ndarray:
    """Direct sums over each receiver box's gathered neighborhood (sorted order)."""
    src = structures.sorted_src
    recv = structures.sorted_recv
    q = src.charges if src.charges is not None else np.ones(src.num_points)
    return backend.kernels.near_field(
        src.points[:, 0],
        src.points[:, 1],
        src.points[:, 2],
        q,
        src.bookmarks,
        structures.neighbor_table.neighbor_bookmark,
        structures.neighbor_table.neighbor_list,
        recv.points[:, 0],
        recv.points[:, 1],
        recv.points[:, 2],
        recv.bookmarks,
    )


def far_field_potentials(
    structures: FmmStructures, p: int, ops: OperatorCache | None = None
) -> np.ndarray:
    """Full hierarchical far-field pass, output per sorted receiver."""
    _check_order(p)
    recv = structures.sorted_recv
    if structures.max_level < 2 or structures.sorted_src.num_boxes == 0:
        return np.zeros(recv.num_points, dtype=np.float64)
    if ops is None:
        ops = OperatorCache(p)
    directory = structures.directory
    lmax = structures.max_level

    multipoles: dict[int, np.ndarray] = {
        lmax: particles_to_multipoles(structures.sorted_src, p)
    }
    for level in range(lmax - 1, 1, -1):
        multipoles[level] = shift_multipoles_up(
            directory.src_boxes[level + 1],
            multipoles[level + 1],
            directory.src_boxes[level],
            level + 1,
            ops,
        )

    locals_lvl = None
    for level in range(2, lmax + 1):
        recv_boxes = directory.recv_boxes[level]
        if locals_lvl is None:
            locals_lvl = np.zeros((recv_boxes.shape[0], p * p), dtype=np.float64)
        locals_lvl += translate_level(
            multipoles[level],
            structures.stencils.bookmark[level],
            structures.stencils.ranks[level],
            structures.stencils.codes[level],
            recv_boxes.shape[0],
            level,
            ops,
        )
        if level < lmax:
            locals_lvl = shift_locals_down(
                recv_boxes, locals_lvl, directory.recv_boxes[level + 1], level + 1, ops
            )
    return locals_to_potentials(recv, locals_lvl, p)


def evaluate(
    structures: FmmStructures,
    p: int,
    include_near: bool = True,
    include_far: bool = True,
) -> np.ndarray:
    """Evaluate potentials at every receiver, in original input order."""
    recv = structures.sorted_recv
    phi = np.zeros(recv.num_points, dtype=np.float64)
    if include_near:
        phi += near_field_potentials(structures)
    if include_far:
        phi += far_field_potentials(structures, p)
    out = np.empty_like(phi)
    out[recv.permutation] = phi
    return out
