"""Bit-level Morton box indexing, box geometry and neighborhood queries.

Boxes live on a 2^level per-axis grid over the unit cube. The octal digit
convention is z-major: digit = iz*4 + iy*2 + ix, coarsest level in the most
significant digit. Levels are capped at 20 so 3*level bits fit a 64-bit
word with headroom.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import backend
from .errors import CapacityError, DomainError

MAX_LEVEL = 20


class Point3(NamedTuple):
    x: float
    y: float
    z: float


class BoxCoords(NamedTuple):
    level: int
    ix: int
    iy: int
    iz: int


class MortonKey(NamedTuple):
    level: int
    index: int


def _check_level(level: int) -> None:
    if level < 0 or level > MAX_LEVEL:
        raise CapacityError(f"level {level} outside [0, {MAX_LEVEL}]")


def normalize_points(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Map arbitrary points into the unit cube.

    Returns (scaled points, origin, extent); scaling is uniform so geometry
    is preserved. Points landing exactly on the upper boundary are handled
    by the clamping box-index convention downstream.
    """
    pts = np.asarray(points, dtype=np.float64)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = float(np.max(hi - lo))
    if extent == 0.0:
        extent = 1.0
    return (pts - lo) / extent, lo, extent


def interleave(coords: BoxCoords) -> MortonKey:
    level, ix, iy, iz = coords
    _check_level(level)
    n = 1 << level
    if not (0 <= ix < n and 0 <= iy < n and 0 <= iz < n):
        raise DomainError(f"coords {coords} outside the level-{level} grid")
    idx = backend.kernels.interleave_coords(
        np.array([ix], dtype=np.uint64),
        np.array([iy], dtype=np.uint64),
        np.array([iz], dtype=np.uint64),
    )
    return MortonKey(level, int(idx[0]))


def deinterleave(key: MortonKey) -> BoxCoords:
    level, index = key
    _check_level(level)
    if not 0 <= index < (1 << (3 * level)):
        raise DomainError(f"index {index} outside the level-{level} grid")
    ix, iy, iz = backend.kernels.deinterleave_indices(np.array([index], dtype=np.uint64))
    return BoxCoords(level, int(ix[0]), int(iy[0]), int(iz[0]))


def box_index_of_point(p, level: int) -> MortonKey:
    _check_level(level)
    x, y, z = p
    idx = backend.kernels.encode_points(
        np.array([x], dtype=np.float64),
        np.array([y], dtype=np.float64),
        np.array([z], dtype=np.float64),
        level,
    )
    return MortonKey(level, int(idx[0]))


def box_indices_of_points(points: np.ndarray, level: int) -> np.ndarray:
    """Vectorized box_index_of_point over an (N, 3) array."""
    _check_level(level)
    pts = np.ascontiguousarray(points, dtype=np.float64)
    return backend.kernels.encode_points(pts[:, 0], pts[:, 1], pts[:, 2], level)


def box_center(key: MortonKey) -> Point3:
    c = deinterleave(key)
    scale = 1.0 / (1 << key.level)
    return Point3((c.ix + 0.5) * scale, (c.iy + 0.5) * scale, (c.iz + 0.5) * scale)


def box_centers(indices: np.ndarray, level: int) -> np.ndarray:
    """(K, 3) centers for an array of Morton indices at one level."""
    ix, iy, iz = backend.kernels.deinterleave_indices(np.asarray(indices, dtype=np.uint64))
    scale = 1.0 / (1 << level)
    out = np.empty((len(ix), 3), dtype=np.float64)
    out[:, 0] = (ix.astype(np.float64) + 0.5) * scale
    out[:, 1] = (iy.astype(np.float64) + 0.5) * scale
    out[:, 2] = (iz.astype(np.float64) + 0.5) * scale
    return out


def parent(key: MortonKey) -> MortonKey:
    if key.level < 1:
        raise DomainError("the root box has no parent")
    return MortonKey(key.level - 1, key.index >> 3)


def children(key: MortonKey) -> list[MortonKey]:
    if key.level >= MAX_LEVEL:
        raise CapacityError(f"children would exceed the level cap {MAX_LEVEL}")
    base = key.index << 3
    return [MortonKey(key.level + 1, base + d) for d in range(8)]


def ancestor_at(key: MortonKey, level: int) -> MortonKey:
    if level > key.level:
        raise DomainError("ancestor level must not exceed the key's level")
    return MortonKey(level, key.index >> (3 * (key.level - level)))


def adjacent_boxes(key: MortonKey) -> list[MortonKey]:
    """Same-level boxes within one grid step in every axis, self included.

    Between 8 (grid corner) and 27 boxes, ascending Morton order; the single
    root grid returns just the box itself.
    """
    level, ix, iy, iz = deinterleave(key)
    n = 1 << level
    out = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                jx, jy, jz = ix + dx, iy + dy, iz + dz
                if 0 <= jx < n and 0 <= jy < n and 0 <= jz < n:
                    out.append(interleave(BoxCoords(level, jx, jy, jz)))
    out.sort(key=lambda k: k.index)
    return out


def interaction_boxes(key: MortonKey) -> list[MortonKey]:
    """The M2L stencil: children of the parent's neighborhood that are not
    in the box's own neighborhood.

    Empty at levels 0 and 1 (the parent neighborhood covers the whole grid
    there and every box is adjacent). At level 2 this is the full complement
    of the 3x3x3 neighborhood. Ascending Morton order, at most 189 boxes.
    """
    if key.level < 2:
        return []
    own = {k.index for k in adjacent_boxes(key)}
    out = []
    for pnb in adjacent_boxes(parent(key)):
        for child in children(pnb):
            if child.index not in own:
                out.append(child)
    out.sort(key=lambda k: k.index)
    return out
