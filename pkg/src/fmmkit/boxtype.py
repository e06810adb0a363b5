"""Per-node classification of the global source boxes.

Types drive the exchange protocol. Below the critical level every box is
node-local after the broadcast, so everything is DOMESTIC. At the critical
level a node imports boxes it owns no part of, merges (ROOT) boxes whose
partition-level children straddle nodes, and exports wholly-owned boxes
(every other node needs them to continue the upward pass). At deeper
levels ownership is exclusive and a box is exported or imported exactly
when the translation stencil geometry crosses the ownership boundary.

Classification is a pure predicate per box, so it is independent of
processing order by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import container
from . import backend
from .errors import DomainError
from .partition import PartitionPlan

_CHUNK = 8192


class BoxType(IntEnum):
    DOMESTIC = 0
    EXPORT = 1
    IMPORT = 2
    ROOT = 3
    OTHER = 4


@dataclass
class TypedBoxList:
    node: int
    plan: PartitionPlan
    boxes: dict[int, np.ndarray]  # level -> global non-empty source boxes
    types: dict[int, np.ndarray]  # level -> int8, aligned with boxes

    def of_type(self, level: int, box_type: BoxType) -> np.ndarray:
        return self.boxes[level][self.types[level] == box_type]

    def export_boxes(self, level: int) -> np.ndarray:
        return self.of_type(level, BoxType.EXPORT)

    def import_boxes(self, level: int) -> np.ndarray:
        return self.of_type(level, BoxType.IMPORT)

    def root_boxes(self, level: int) -> np.ndarray:
        return self.of_type(level, BoxType.ROOT)


_STENCIL_OFFSETS = np.array(
    [(dx, dy, dz) for dz in range(-2, 4) for dy in range(-2, 4) for dx in range(-2, 4)],
    dtype=np.int64,
)


def _stencil_owner_flags(
    boxes: np.ndarray, level: int, plan: PartitionPlan, node: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per box: does its translation stencil touch this node / another node?

    Considers the stencil geometry over all grid boxes (empty included);
    ownership is resolved at node granularity via the partition-level
    ancestor.
    """
    n = 1 << level
    touches_mine = np.zeros(boxes.shape[0], dtype=bool)
    touches_other = np.zeros(boxes.shape[0], dtype=bool)
    g = plan.units_per_node
    for lo in range(0, boxes.shape[0], _CHUNK):
        hi = min(lo + _CHUNK, boxes.shape[0])
        ix, iy, iz = backend.kernels.deinterleave_indices(boxes[lo:hi])
        ix = ix.astype(np.int64)
        iy = iy.astype(np.int64)
        iz = iz.astype(np.int64)
        cx = 2 * (ix >> 1)[:, None] + _STENCIL_OFFSETS[:, 0][None, :]
        cy = 2 * (iy >> 1)[:, None] + _STENCIL_OFFSETS[:, 1][None, :]
        cz = 2 * (iz >> 1)[:, None] + _STENCIL_OFFSETS[:, 2][None, :]
        near = (
            (np.abs(cx - ix[:, None]) <= 1)
            & (np.abs(cy - iy[:, None]) <= 1)
            & (np.abs(cz - iz[:, None]) <= 1)
        )
        valid = (
            (cx >= 0) & (cx < n) & (cy >= 0) & (cy < n) & (cz >= 0) & (cz < n) & ~near
        )
        cand = backend.kernels.interleave_coords(
            np.clip(cx, 0, n - 1), np.clip(cy, 0, n - 1), np.clip(cz, 0, n - 1)
        )
        owner_nodes = plan.unit_of_box_index(cand, level).astype(np.int64) // g
        touches_mine[lo:hi] = np.any(valid & (owner_nodes == node), axis=1)
        touches_other[lo:hi] = np.any(valid & (owner_nodes != node), axis=1)
    return touches_mine, touches_other


def classify(
    node: int, global_src_boxes: dict[int, np.ndarray], plan: PartitionPlan
) -> TypedBoxList:
    """Assign a type to every global non-empty source box, per level."""
    l_crit = plan.critical_level
    l_par = plan.partition_level
    g = plan.units_per_node
    types: dict[int, np.ndarray] = {}
    for level in sorted(global_src_boxes):
        if level < 2:
            raise DomainError("octree data start at level 2")
        boxes = np.asarray(global_src_boxes[level], dtype=np.uint64)
        out = np.full(boxes.shape[0], BoxType.DOMESTIC, dtype=np.int8)
        if level < l_crit or plan.nodes == 1:
            types[level] = out
            continue
        if level == l_crit:
            if l_par == l_crit:
                owner = plan.node_of_box_index(boxes, level)
                out[:] = np.where(owner == node, BoxType.EXPORT, BoxType.IMPORT)
            else:
                span = 8 ** (l_par - l_crit)
                starts = (boxes.astype(np.int64)) * span
                child_units = plan.box_proc_id[
                    starts[:, None] + np.arange(span)[None, :]
                ]
                child_nodes = child_units // g
                has_mine = np.any(child_nodes == node, axis=1)
                all_mine = np.all(child_nodes == node, axis=1)
                out[~has_mine] = BoxType.IMPORT
                out[has_mine & ~all_mine] = BoxType.ROOT
                out[all_mine] = BoxType.EXPORT
        else:
            owner = plan.node_of_box_index(boxes, level)
            mine = owner == node
            touches_mine, touches_other = _stencil_owner_flags(boxes, level, plan, node)
            out[mine & touches_other] = BoxType.EXPORT
            out[~mine] = np.where(
                touches_mine[~mine], BoxType.IMPORT, BoxType.OTHER
            ).astype(np.int8)
        types[level] = out
    return TypedBoxList(node=node, plan=plan, boxes=dict(global_src_boxes), types=types)


def dump_typed(typed: TypedBoxList, path) -> None:
    sec = container.Section(tag="BTYP", meta={"node": typed.node})
    for level in sorted(typed.boxes):
        sec.arrays[f"boxes_{level}"] = typed.boxes[level]
        sec.arrays[f"types_{level}"] = typed.types[level].astype(np.int16)
    container.write_container(path, max(typed.boxes), [sec])


def load_typed(path, plan: PartitionPlan) -> TypedBoxList:
    _, sections = container.read_container(path)
    sec = next(s for s in sections if s.tag == "BTYP")
    boxes: dict[int, np.ndarray] = {}
    types: dict[int, np.ndarray] = {}
    for name, arr in sec.arrays.items():
        kind, level = name.rsplit("_", 1)
        if kind == "boxes":
            boxes[int(level)] = arr
        else:
            types[int(level)] = arr.astype(np.int8)
    return TypedBoxList(node=int(sec.meta["node"]), plan=plan, boxes=boxes, types=types)
