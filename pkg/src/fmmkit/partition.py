"""Two-level global partition (nodes x accelerator units) of box ranges by
receiver load, plus point scattering with halo duplication.

Units receive contiguous Morton ranges of partition-level boxes; unit ids
within a node are consecutive, so node ranges are contiguous too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container
from .errors import DomainError, InfeasiblePartitionError
from .morton import MortonKey

RECV_POINT_BYTES = 24  # 3 coordinates
SRC_POINT_BYTES = 32  # 3 coordinates + strength


@dataclass
class PartitionPlan:
    nodes: int
    units_per_node: int
    partition_level: int
    critical_level: int
    box_proc_id: np.ndarray  # (8^partition_level,) owner unit per box
    unit_ranges: np.ndarray  # (U, 2) start/end (exclusive) box index
    balanced: bool
    load_ratio: float

    @property
    def num_units(self) -> int:
        return self.nodes * self.units_per_node

    def node_of_unit(self, unit: int) -> int:
        return unit // self.units_per_node

    def unit_of_box_index(self, index: np.ndarray | int, level: int) -> np.ndarray | int:
        """Owner unit of boxes at `level` >= the partition level."""
        if level < self.partition_level:
            raise DomainError("boxes above the partition level have a unit range, not one unit")
        shift = np.uint64(3 * (level - self.partition_level))
        idx = np.asarray(index, dtype=np.uint64) >> shift
        out = self.box_proc_id[idx.astype(np.int64)]
        return out if isinstance(index, np.ndarray) else int(out)

    def node_of_box_index(self, index: np.ndarray | int, level: int) -> np.ndarray | int:
        unit = self.unit_of_box_index(index, level)
        return unit // self.units_per_node if isinstance(index, np.ndarray) else int(unit) // self.units_per_node


def owner_of(key: MortonKey, plan: PartitionPlan) -> int | tuple[int, int]:
    """Owner unit of a box; coarse boxes report their contiguous unit range."""
    if key.level >= plan.partition_level:
        return int(plan.unit_of_box_index(key.index, key.level))
    d = 3 * (plan.partition_level - key.level)
    lo = key.index << d
    hi = ((key.index + 1) << d) - 1
    return int(plan.box_proc_id[lo]), int(plan.box_proc_id[hi])


def _loads_at_level(
    recv_boxes: np.ndarray, recv_counts: np.ndarray, from_level: int, level: int
) -> np.ndarray:
    shift = np.uint64(3 * (from_level - level))
    ancestors = (np.asarray(recv_boxes, dtype=np.uint64) >> shift).astype(np.int64)
    dense = np.zeros(8**level, dtype=np.int64)
    np.add.at(dense, ancestors, np.asarray(recv_counts, dtype=np.int64))
    return dense


def choose_partition(
    recv_boxes: np.ndarray,
    recv_counts: np.ndarray,
    max_level: int,
    nodes: int,
    units_per_node: int,
    tolerance: float = 0.2,
) -> PartitionPlan:
    """Deepen the partition level until the load balance meets the tolerance.

    At each candidate level the Morton-ordered load prefix sum is cut into
    P*g contiguous ranges targeting an equal share each; ties at cut points
    break toward the earlier range. The first level whose max/mean range
    load is within 1+tolerance wins; if none qualifies by max_level the
    best-found plan is returned flagged unbalanced.
    """
    units = nodes * units_per_node
    if units < 1:
        raise DomainError("need at least one compute unit")
    if units > np.asarray(recv_boxes).shape[0]:
        raise InfeasiblePartitionError(
            f"{units} units exceed the {np.asarray(recv_boxes).shape[0]} non-empty receiver boxes"
        )
    total = int(np.sum(recv_counts))
    best: PartitionPlan | None = None
    for level in range(2, max(max_level, 2) + 1):
        dense = _loads_at_level(recv_boxes, recv_counts, max_level, level)
        incl = np.cumsum(dense)
        nboxes = dense.shape[0]
        targets = total * (np.arange(1, units, dtype=np.float64)) / units
        cuts = np.searchsorted(incl, targets, side="left") + 1
        bounds = np.concatenate([[0], np.minimum(cuts, nboxes), [nboxes]])
        bounds = np.maximum.accumulate(bounds)
        range_loads = incl[bounds[1:] - 1] - np.where(bounds[:-1] > 0, incl[bounds[:-1] - 1], 0)
        mean = total / units
        ratio = float(range_loads.max() / mean) if mean > 0 else 1.0
        box_proc = np.repeat(
            np.arange(units, dtype=np.int32), np.diff(bounds).astype(np.int64)
        )
        plan = PartitionPlan(
            nodes=nodes,
            units_per_node=units_per_node,
            partition_level=level,
            critical_level=max(level - 1, 2),
            box_proc_id=box_proc,
            unit_ranges=np.stack([bounds[:-1], bounds[1:]], axis=1),
            balanced=ratio <= 1.0 + tolerance,
            load_ratio=ratio,
        )
        if plan.balanced:
            return plan
        if best is None or plan.load_ratio < best.load_ratio:
            best = plan
    return best


@dataclass
class UnitPoints:
    """One unit's scattered data; arrays keep the original relative order."""

    unit: int
    src_points: np.ndarray
    src_charges: np.ndarray
    src_owned: np.ndarray  # bool; False marks halo copies
    recv_points: np.ndarray
    recv_original: np.ndarray  # original global receiver indices


@dataclass
class ScatterResult:
    plan: PartitionPlan
    max_level: int
    units: list[UnitPoints]
    moved_points: int = 0
    halo_copies: int = 0
    moved_bytes: int = 0


_WINDOW_OFFSETS = np.array(
    [(dx, dy, dz) for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)],
    dtype=np.int64,
)


def _window_units(boxes: np.ndarray, level: int, plan: PartitionPlan) -> np.ndarray:
    """(B, 27) owner unit of each box's neighborhood window; -1 off-grid."""
    from . import backend

    n = 1 << level
    ix, iy, iz = backend.kernels.deinterleave_indices(boxes)
    cx = ix.astype(np.int64)[:, None] + _WINDOW_OFFSETS[:, 0][None, :]
    cy = iy.astype(np.int64)[:, None] + _WINDOW_OFFSETS[:, 1][None, :]
    cz = iz.astype(np.int64)[:, None] + _WINDOW_OFFSETS[:, 2][None, :]
    valid = (cx >= 0) & (cx < n) & (cy >= 0) & (cy < n) & (cz >= 0) & (cz < n)
    cand = backend.kernels.interleave_coords(
        np.clip(cx, 0, n - 1), np.clip(cy, 0, n - 1), np.clip(cz, 0, n - 1)
    )
    units = plan.unit_of_box_index(cand, level).astype(np.int64)
    units[~valid] = -1
    return units


def scatter_points(
    src_points: np.ndarray,
    src_charges: np.ndarray,
    recv_points: np.ndarray,
    plan: PartitionPlan,
    max_level: int,
) -> ScatterResult:
    """Distribute receivers exclusively and sources with halo duplication.

    A source living in box b is copied to every unit owning any box of b's
    neighborhood window at the finest level: the weakest rule that keeps
    every unit's near-field gather complete.
    """
    from .morton import box_indices_of_points

    src_points = np.asarray(src_points, dtype=np.float64).reshape(-1, 3)
    recv_points = np.asarray(recv_points, dtype=np.float64).reshape(-1, 3)
    src_charges = np.asarray(src_charges, dtype=np.float64)

    src_boxes = box_indices_of_points(src_points, max_level)
    recv_boxes = box_indices_of_points(recv_points, max_level)
    recv_units = plan.unit_of_box_index(recv_boxes, max_level)
    src_owner_units = plan.unit_of_box_index(src_boxes, max_level)

    uniq_boxes, inverse = np.unique(src_boxes, return_inverse=True)
    win_units = _window_units(uniq_boxes, max_level, plan)

    result = ScatterResult(plan=plan, max_level=max_level, units=[])
    for unit in range(plan.num_units):
        needs_box = np.any(win_units == unit, axis=1)
        src_mask = needs_box[inverse]
        owned = src_owner_units == unit
        recv_mask = recv_units == unit
        up = UnitPoints(
            unit=unit,
            src_points=src_points[src_mask],
            src_charges=src_charges[src_mask],
            src_owned=owned[src_mask],
            recv_points=recv_points[recv_mask],
            recv_original=np.flatnonzero(recv_mask).astype(np.int64),
        )
        result.units.append(up)
        result.moved_points += up.src_points.shape[0] + up.recv_points.shape[0]
        result.moved_bytes += (
            up.src_points.shape[0] * SRC_POINT_BYTES
            + up.recv_points.shape[0] * RECV_POINT_BYTES
        )
    result.halo_copies = (
        sum(u.src_points.shape[0] for u in result.units) - src_points.shape[0]
    )
    return result


def dump_plan(plan: PartitionPlan, path) -> None:
    sec = container.Section(
        tag="PLAN",
        meta={
            "nodes": plan.nodes,
            "units_per_node": plan.units_per_node,
            "partition_level": plan.partition_level,
            "critical_level": plan.critical_level,
            "balanced": int(plan.balanced),
            "load_ratio_micro": int(round(plan.load_ratio * 1_000_000)),
        },
        arrays={"box_proc_id": plan.box_proc_id, "unit_ranges": plan.unit_ranges},
    )
    container.write_container(path, plan.partition_level, [sec])


def load_plan(path) -> PartitionPlan:
    _, sections = container.read_container(path)
    sec = next(s for s in sections if s.tag == "PLAN")
    return PartitionPlan(
        nodes=int(sec.meta["nodes"]),
        units_per_node=int(sec.meta["units_per_node"]),
        partition_level=int(sec.meta["partition_level"]),
        critical_level=int(sec.meta["critical_level"]),
        box_proc_id=sec.arrays["box_proc_id"],
        unit_ranges=sec.arrays["unit_ranges"],
        balanced=bool(sec.meta["balanced"]),
        load_ratio=sec.meta["load_ratio_micro"] / 1_000_000,
    )
