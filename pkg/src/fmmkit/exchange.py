"""Simulated multi-node evaluation: scatter, per-node upward pass, the
manager-routed coefficient exchange at and above the critical level, the
downward pass, and redistribution back to the original receiver order.

Transport is an in-process mailbox per node with the master node acting as
router; every packet is metered with the same byte accounting a wire
implementation would see (packet = level u8 + box u64 + p^2 float64).
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field

import numpy as np

from .boxtype import BoxType, TypedBoxList, classify
from .errors import DomainError, RoutingError
from .expansions import OperatorCache
from .fmm import (
    locals_to_potentials,
    near_field_potentials,
    particles_to_multipoles,
    shift_locals_down,
    shift_multipoles_up,
    translate_level,
)
from .lists import FmmStructures, build_level_directory, build_neighbor_table
from .morton import box_indices_of_points
from .partition import PartitionPlan, ScatterResult, choose_partition, scatter_points
from .pseudosort import choose_max_level, sort_points

PACKET_HEADER_BYTES = 9  # level u8 + box u64
REQUEST_BYTES = 9
LOAD_REPORT_ENTRY_BYTES = 12  # box u64 + count u32


def packet_bytes(p: int) -> int:
    return PACKET_HEADER_BYTES + 8 * p * p


@dataclass
class MDataPacket:
    level: int
    box: int
    coefficients: np.ndarray  # packed, p^2 float64
    complete: bool


@dataclass
class NodeTraffic:
    sent_bytes: int = 0
    recv_bytes: int = 0
    sent_packets: int = 0
    recv_packets: int = 0
    exported_per_level: dict[int, int] = field(default_factory=dict)
    imported_per_level: dict[int, int] = field(default_factory=dict)


@dataclass
class TrafficLedger:
    per_node: list[NodeTraffic]
    manager_received_bytes: int = 0
    manager_sent_bytes: int = 0
    merged_roots: int = 0
    critical_broadcast_bytes: int = 0
    plan_broadcast_bytes: int = 0
    load_report_bytes: int = 0
    box_list_bytes: int = 0
    scatter_points: int = 0
    scatter_bytes: int = 0
    halo_copies: int = 0

    def conservation_ok(self) -> bool:
        sent = sum(n.sent_bytes for n in self.per_node)
        recv = sum(n.recv_bytes for n in self.per_node)
        return sent == self.manager_received_bytes and recv == self.manager_sent_bytes

    def snapshot(self) -> "TrafficLedger":
        return copy.deepcopy(self)


@dataclass
class UnitRuntime:
    unit: int
    structures: FmmStructures
    recv_original: np.ndarray
    src_owned_sorted: np.ndarray  # owned mask aligned with sorted sources


@dataclass
class NodeState:
    node: int
    plan: PartitionPlan
    p: int
    max_level: int
    units: list[UnitRuntime] = field(default_factory=list)
    src_boxes: dict[int, np.ndarray] = field(default_factory=dict)  # global, per level
    m_data: dict[int, np.ndarray] = field(default_factory=dict)
    m_have: dict[int, np.ndarray] = field(default_factory=dict)
    root_partial: dict[int, np.ndarray] = field(default_factory=dict)
    typed: TypedBoxList | None = None
    recv_boxes: dict[int, np.ndarray] = field(default_factory=dict)
    stencils: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = field(
        default_factory=dict
    )
    sorted_owned_src = None  # SortedPointSet of owned (non-halo) sources


def _unit_structures(
    up, max_level: int, mode: str, workers: int
) -> tuple[FmmStructures, np.ndarray]:
    """Near-field structures over one unit's scattered points."""
    sorted_src = sort_points(up.src_points, up.src_charges, max_level, mode=mode, workers=workers)
    sorted_recv = sort_points(up.recv_points, None, max_level, mode=mode, workers=workers)
    table = build_neighbor_table(
        sorted_src.non_empty_index, sorted_recv.non_empty_index, max_level
    )
    directory = build_level_directory(
        sorted_src.non_empty_index, sorted_recv.non_empty_index, max_level
    )
    from .lists import TranslationStencils

    structures = FmmStructures(
        max_level=max_level,
        sorted_src=sorted_src,
        sorted_recv=sorted_recv,
        neighbor_table=table,
        directory=directory,
        stencils=TranslationStencils(bookmark={}, ranks={}, codes={}),
    )
    owned_sorted = np.asarray(up.src_owned)[sorted_src.permutation]
    return structures, owned_sorted


class SimulatedCluster:
    """P nodes x g units evaluating one instance against a shared manager."""

    def __init__(
        self,
        src_points: np.ndarray,
        src_charges: np.ndarray,
        recv_points: np.ndarray,
        p: int,
        nodes: int,
        units_per_node: int = 1,
        max_level: int | None = None,
        cluster_size: int | None = None,
        tolerance: float = 0.2,
        mode: str = "deterministic",
        workers: int = 1,
        trace_path=None,
        audit: bool = False,
    ):
        self.src_points = np.asarray(src_points, dtype=np.float64).reshape(-1, 3)
        self.src_charges = np.asarray(src_charges, dtype=np.float64)
        self.recv_points = np.asarray(recv_points, dtype=np.float64).reshape(-1, 3)
        self.p = p
        if max_level is None:
            if cluster_size is None:
                raise DomainError("either max_level or cluster_size is required")
            max_level = choose_max_level(self.src_points.shape[0], cluster_size)
        self.max_level = max_level
        self.mode = mode
        self.workers = workers
        self.audit = audit
        self.ops = OperatorCache(p)
        self.ledger = TrafficLedger(per_node=[NodeTraffic() for _ in range(nodes)])
        self._trace_rows: list[tuple] = []
        self._trace_path = trace_path
        self.p2m_counts: dict[int, int] = {}
        self.root_contributions: dict[int, list[tuple[int, int]]] = {}
        self._upward_done = False
        self._prepare(nodes, units_per_node, tolerance)

    # -- construction ------------------------------------------------------

    def _trace(self, phase: str, src: str, dst: str, level: int, box: int, nbytes: int):
        if self._trace_path is not None:
            self._trace_rows.append((phase, src, dst, level, box, nbytes))

    def _prepare(self, nodes: int, units_per_node: int, tolerance: float) -> None:
        lmax = self.max_level
        recv_boxes_all = box_indices_of_points(self.recv_points, lmax)

        # master-based planning: nodes report per-box receiver loads from
        # their (arbitrary) initial slices, the master cuts and broadcasts
        slices = np.array_split(np.arange(self.recv_points.shape[0]), nodes)
        for sl in slices:
            local_nonempty = np.unique(recv_boxes_all[sl])
            self.ledger.load_report_bytes += local_nonempty.shape[0] * LOAD_REPORT_ENTRY_BYTES
        uniq, counts = np.unique(recv_boxes_all, return_counts=True)
        self.plan = choose_partition(
            uniq, counts, lmax, nodes, units_per_node, tolerance=tolerance
        )
        self.ledger.plan_broadcast_bytes = self.plan.box_proc_id.nbytes * nodes

        scatter = scatter_points(
            self.src_points, self.src_charges, self.recv_points, self.plan, lmax
        )
        self.scatter: ScatterResult = scatter
        self.ledger.scatter_points = scatter.moved_points
        self.ledger.scatter_bytes = scatter.moved_bytes
        self.ledger.halo_copies = scatter.halo_copies

        self.nodes = [
            NodeState(node=j, plan=self.plan, p=self.p, max_level=lmax)
            for j in range(nodes)
        ]
        g = units_per_node
        for up in scatter.units:
            node = self.nodes[up.unit // g]
            structures, owned_sorted = _unit_structures(up, lmax, self.mode, self.workers)
            node.units.append(
                UnitRuntime(
                    unit=up.unit,
                    structures=structures,
                    recv_original=up.recv_original,
                    src_owned_sorted=owned_sorted,
                )
            )

        # each node's translation sources are its owned (non-halo) points
        for node in self.nodes:
            owned_pts = [
                u.structures.sorted_src.points[u.src_owned_sorted] for u in node.units
            ]
            owned_q = [
                u.structures.sorted_src.charges[u.src_owned_sorted] for u in node.units
            ]
            pts = np.concatenate(owned_pts) if owned_pts else np.empty((0, 3))
            q = np.concatenate(owned_q) if owned_q else np.empty(0)
            node.sorted_owned_src = sort_points(pts, q, lmax, mode=self.mode, workers=self.workers)

        # the master merges per-node source box lists into the global
        # per-level arrays and broadcasts them
        per_node_lmax = [n.sorted_owned_src.non_empty_index for n in self.nodes]
        for arr in per_node_lmax:
            self.ledger.box_list_bytes += arr.nbytes
        global_lmax = np.unique(np.concatenate(per_node_lmax))
        global_src: dict[int, np.ndarray] = {lmax: global_lmax}
        for level in range(lmax - 1, 1, -1):
            global_src[level] = np.unique(global_src[level + 1] >> np.uint64(3))
        self.global_src = global_src
        self.ledger.box_list_bytes += (
            sum(a.nbytes for a in global_src.values()) * nodes
        )

        for node in self.nodes:
            node.src_boxes = global_src
            if lmax >= 2:
                node.typed = classify(node.node, global_src, self.plan)
                for level, boxes in global_src.items():
                    node.m_data[level] = np.zeros((boxes.shape[0], self.p**2))
                    node.m_have[level] = np.zeros(boxes.shape[0], dtype=bool)
            recv_lmax = np.sort(
                np.concatenate(
                    [u.structures.sorted_recv.non_empty_index for u in node.units]
                )
            )
            node.recv_boxes = {lmax: recv_lmax}
            for level in range(lmax - 1, 1, -1):
                node.recv_boxes[level] = np.unique(
                    node.recv_boxes[level + 1] >> np.uint64(3)
                )
            from . import backend

            for level in range(2, lmax + 1):
                node.stencils[level] = backend.kernels.stencil_segments(
                    node.recv_boxes[level], global_src[level], level
                )

    # -- upward pass and exchange -----------------------------------------

    def run_upward_exchange(self) -> TrafficLedger:
        """Local expansions up to the critical level, then the manager round.

        After this call every node holds complete coefficients for all of
        its import and root boxes and for every level at or above the
        critical level.
        """
        lmax = self.max_level
        l_crit = self.plan.critical_level
        if lmax < 2:  # no expansion levels; the run is pure near field
            self._upward_done = True
            return self.ledger

        for node in self.nodes:
            boxes = node.sorted_owned_src.non_empty_index
            rows = np.searchsorted(self.global_src[lmax], boxes)
            node.m_data[lmax][:] = 0.0
            node.m_have[lmax][:] = False
            node.m_data[lmax][rows] = particles_to_multipoles(node.sorted_owned_src, self.p)
            node.m_have[lmax][rows] = True
            if self.audit:
                for b in boxes:
                    self.p2m_counts[int(b)] = self.p2m_counts.get(int(b), 0) + 1
            for level in range(lmax - 1, l_crit - 1, -1):
                child_boxes = self.global_src[level + 1]
                have = node.m_have[level + 1]
                node.m_data[level][:] = 0.0
                node.m_have[level][:] = False
                if np.any(have):
                    node.m_data[level] += shift_multipoles_up(
                        child_boxes[have],
                        node.m_data[level + 1][have],
                        self.global_src[level],
                        level + 1,
                        self.ops,
                    )
                    parents = np.unique(child_boxes[have] >> np.uint64(3))
                    node.m_have[level][np.searchsorted(self.global_src[level], parents)] = True
            node.root_partial = {}
            if lmax >= l_crit:
                root_rows = np.flatnonzero(node.typed.types[l_crit] == BoxType.ROOT)
                for r in root_rows:
                    node.root_partial[int(self.global_src[l_crit][r])] = node.m_data[
                        l_crit
                    ][r].copy()
                    if self.audit:
                        b = int(self.global_src[l_crit][r])
                        kids = self._owned_children(node, b)
                        self.root_contributions.setdefault(b, []).extend(
                            (node.node, int(k)) for k in kids
                        )

        exports, requests = self._collect_mailboxes()
        replies = self._route(exports, requests)
        self._deliver(replies)

        for node in self.nodes:
            for level in range(l_crit - 1, 1, -1):
                child_boxes = self.global_src[level + 1]
                node.m_data[level][:] = 0.0
                node.m_data[level] += shift_multipoles_up(
                    child_boxes,
                    node.m_data[level + 1],
                    self.global_src[level],
                    level + 1,
                    self.ops,
                )
                node.m_have[level][:] = True
        self._upward_done = True
        if self._trace_path is not None:
            self._flush_trace()
        return self.ledger

    def _owned_children(self, node: NodeState, root_box: int) -> np.ndarray:
        """Non-empty children of a critical-level box owned by this node."""
        l_crit = self.plan.critical_level
        child_level = l_crit + 1
        if child_level not in self.global_src:
            return np.empty(0, dtype=np.uint64)
        arr = self.global_src[child_level]
        lo = np.searchsorted(arr, np.uint64(root_box << 3))
        hi = np.searchsorted(arr, np.uint64((root_box + 1) << 3))
        kids = arr[lo:hi]
        owners = self.plan.node_of_box_index(kids, child_level)
        return kids[owners == node.node]

    def _collect_mailboxes(self):
        lmax = self.max_level
        l_crit = self.plan.critical_level
        exports: dict[tuple[int, int], dict[int, np.ndarray]] = {}
        requests: dict[int, list[tuple[int, int]]] = {}
        for node in self.nodes:
            traffic = self.ledger.per_node[node.node]
            requests[node.node] = []
            for level in range(lmax, l_crit - 1, -1):
                types = node.typed.types[level]
                boxes = self.global_src[level]
                exp_rows = np.flatnonzero(types == BoxType.EXPORT)
                table: dict[int, np.ndarray] = {}
                for r in exp_rows:
                    if not node.m_have[level][r]:
                        raise RoutingError(
                            f"node {node.node} exports box {int(boxes[r])} at level "
                            f"{level} without data"
                        )
                    table[int(boxes[r])] = node.m_data[level][r]
                    traffic.sent_bytes += packet_bytes(self.p)
                    traffic.sent_packets += 1
                    self._trace("up-export", f"node{node.node}", "manager", level, int(boxes[r]), packet_bytes(self.p))
                if level == l_crit:
                    for b, partial in sorted(node.root_partial.items()):
                        table[b] = partial
                        traffic.sent_bytes += packet_bytes(self.p)
                        traffic.sent_packets += 1
                        self._trace("up-root", f"node{node.node}", "manager", level, b, packet_bytes(self.p))
                exports[(node.node, level)] = table
                traffic.exported_per_level[level] = traffic.exported_per_level.get(
                    level, 0
                ) + len(table)
                imp_rows = np.flatnonzero(types == BoxType.IMPORT)
                for r in imp_rows:
                    requests[node.node].append((level, int(boxes[r])))
                if level == l_crit:
                    for b in sorted(node.root_partial):
                        requests[node.node].append((level, b))
            for level in range(lmax, l_crit - 1, -1):
                traffic.imported_per_level[level] = sum(
                    1 for (l, _) in requests[node.node] if l == level
                )
            traffic.sent_bytes += REQUEST_BYTES * len(requests[node.node])
        self.ledger.manager_received_bytes = sum(
            n.sent_bytes for n in self.ledger.per_node
        )
        return exports, requests

    def _route(self, exports, requests):
        l_crit = self.plan.critical_level
        l_par = self.plan.partition_level
        g = self.plan.units_per_node
        span = 8 ** (l_par - l_crit)

        merged: dict[int, np.ndarray] = {}
        for node in self.nodes:  # ascending node id fixes the merge order
            for b, partial in sorted(node.root_partial.items()):
                if b in merged:
                    merged[b] = merged[b] + partial
                else:
                    merged[b] = partial.copy()
        self.ledger.merged_roots = len(merged)

        replies: dict[int, list[MDataPacket]] = {j: [] for j in requests}
        for j in sorted(requests):
            for level, box in requests[j]:
                if level == l_crit and box in merged:
                    coeffs = merged[box]
                elif level == l_crit:
                    owner = int(self.plan.box_proc_id[box * span]) // g
                    coeffs = exports.get((owner, level), {}).get(box)
                else:
                    owner = int(self.plan.node_of_box_index(np.uint64(box), level))
                    coeffs = exports.get((owner, level), {}).get(box)
                if coeffs is None:
                    raise RoutingError(
                        f"no node exports box {box} at level {level} "
                        f"(requested by node {j})"
                    )
                replies[j].append(MDataPacket(level, box, coeffs, complete=True))
        return replies

    def _deliver(self, replies: dict[int, list[MDataPacket]]) -> None:
        l_crit = self.plan.critical_level
        for j, packets in replies.items():
            node = self.nodes[j]
            traffic = self.ledger.per_node[j]
            for pkt in packets:
                row = int(
                    np.searchsorted(self.global_src[pkt.level], np.uint64(pkt.box))
                )
                node.m_data[pkt.level][row] = pkt.coefficients
                node.m_have[pkt.level][row] = True
                nbytes = packet_bytes(self.p)
                traffic.recv_bytes += nbytes
                traffic.recv_packets += 1
                if pkt.level == l_crit:
                    self.ledger.critical_broadcast_bytes += nbytes
                self._trace("down-import", "manager", f"node{j}", pkt.level, pkt.box, nbytes)
        self.ledger.manager_sent_bytes = sum(n.recv_bytes for n in self.ledger.per_node)

    # -- downward pass ------------------------------------------------------

    def run_downward_redistribution(self) -> np.ndarray:
        """Per-node downward pass, then unit-level output in original order."""
        if not self._upward_done:
            raise DomainError("run_upward_exchange must complete first")
        lmax = self.max_level
        out = np.zeros(self.recv_points.shape[0], dtype=np.float64)
        for node in self.nodes:
            locals_lvl = None
            if lmax >= 2:
                for level in range(2, lmax + 1):
                    recv_boxes = node.recv_boxes[level]
                    bookmark, ranks, codes = node.stencils[level]
                    if ranks.shape[0] and not node.m_have[level][ranks].all():
                        missing = self.global_src[level][
                            ranks[~node.m_have[level][ranks]][0]
                        ]
                        raise RoutingError(
                            f"node {node.node} lacks coefficients for stencil box "
                            f"{int(missing)} at level {level}"
                        )
                    if locals_lvl is None:
                        locals_lvl = np.zeros((recv_boxes.shape[0], self.p**2))
                    locals_lvl += translate_level(
                        node.m_data[level],
                        bookmark,
                        ranks,
                        codes,
                        recv_boxes.shape[0],
                        level,
                        self.ops,
                    )
                    if level < lmax:
                        locals_lvl = shift_locals_down(
                            recv_boxes,
                            locals_lvl,
                            node.recv_boxes[level + 1],
                            level + 1,
                            self.ops,
                        )
            for unit in node.units:
                recv_sorted = unit.structures.sorted_recv
                phi = near_field_potentials(unit.structures)
                if locals_lvl is not None and recv_sorted.num_boxes:
                    rows = np.searchsorted(
                        node.recv_boxes[lmax], recv_sorted.non_empty_index
                    )
                    phi = phi + locals_to_potentials(
                        recv_sorted, locals_lvl[rows], self.p
                    )
                unit_out = np.empty_like(phi)
                unit_out[recv_sorted.permutation] = phi
                out[unit.recv_original] = unit_out
        return out

    def meter(self) -> TrafficLedger:
        """Immutable snapshot of the traffic ledger."""
        return self.ledger.snapshot()

    # -- audits --------------------------------------------------------------

    def translation_audit(self) -> dict[str, int]:
        """Exactly-once bookkeeping: expansion and merge duplicates."""
        dup_p2m = sum(1 for c in self.p2m_counts.values() if c != 1)
        missing_p2m = sum(
            1
            for b in self.global_src[self.max_level]
            if int(b) not in self.p2m_counts
        )
        dup_root_children = 0
        for b, contribs in self.root_contributions.items():
            kids = [k for (_, k) in contribs]
            dup_root_children += len(kids) - len(set(kids))
        return {
            "duplicate_expansions": dup_p2m,
            "missing_expansions": missing_p2m,
            "duplicate_root_children": dup_root_children,
        }

    def coverage_audit(self) -> dict[str, int]:
        """Each finest-level source box must reach each receiver box once,
        through the near segment or exactly one stencil ancestor level."""
        lmax = self.max_level
        gsrc = self.global_src[lmax]
        duplicates = 0
        misses = 0
        for node in self.nodes:
            for unit in node.units:
                st = unit.structures
                unit_src = st.sorted_src.non_empty_index
                table = st.neighbor_table
                for j, rbox in enumerate(st.sorted_recv.non_empty_index):
                    cover = np.zeros(gsrc.shape[0], dtype=np.int64)
                    seg = table.neighbor_list[
                        table.neighbor_bookmark[j] : table.neighbor_bookmark[j + 1]
                    ]
                    near_boxes = unit_src[seg]
                    cover[np.searchsorted(gsrc, near_boxes)] += 1
                    for level in range(2, lmax + 1):
                        anc = np.uint64(int(rbox) >> (3 * (lmax - level)))
                        row = int(np.searchsorted(node.recv_boxes[level], anc))
                        bm, ranks, _ = node.stencils[level]
                        sboxes = self.global_src[level][ranks[bm[row] : bm[row + 1]]]
                        d = 3 * (lmax - level)
                        lo = np.searchsorted(gsrc, sboxes << np.uint64(d))
                        hi = np.searchsorted(
                            gsrc, (sboxes + np.uint64(1)) << np.uint64(d)
                        )
                        for a, b in zip(lo, hi):
                            cover[a:b] += 1
                    duplicates += int(np.sum(cover > 1))
                    misses += int(np.sum(cover == 0))
        return {"duplicates": duplicates, "misses": misses}

    def _flush_trace(self) -> None:
        with open(self._trace_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["phase", "from", "to", "level", "box", "bytes"])
            writer.writerows(self._trace_rows)


def evaluate_distributed(
    src_points: np.ndarray,
    src_charges: np.ndarray,
    recv_points: np.ndarray,
    p: int,
    nodes: int,
    units_per_node: int = 1,
    max_level: int | None = None,
    cluster_size: int | None = None,
    **kwargs,
) -> tuple[np.ndarray, TrafficLedger, SimulatedCluster]:
    """One-call distributed evaluation; returns potentials in input order."""
    cluster = SimulatedCluster(
        src_points,
        src_charges,
        recv_points,
        p,
        nodes,
        units_per_node,
        max_level=max_level,
        cluster_size=cluster_size,
        **kwargs,
    )
    cluster.run_upward_exchange()
    phi = cluster.run_downward_redistribution()
    return phi, cluster.meter(), cluster
