"""Load-balanced partition plans and point scattering."""

import numpy as np
import pytest

from fmmkit import (
    InfeasiblePartitionError,
    MortonKey,
    box_indices_of_points,
    choose_partition,
    owner_of,
    scatter_points,
)
from fmmkit.partition import dump_plan, load_plan
from tests_support import decode_coords


def uniform_plan(nodes, units):
    boxes = np.arange(64, dtype=np.uint64)
    counts = np.full(64, 10, dtype=np.int64)
    return choose_partition(boxes, counts, 2, nodes, units)


def test_single_unit_plan():
    plan = uniform_plan(1, 1)
    assert plan.partition_level == 2
    assert plan.critical_level == 2
    assert plan.balanced and plan.load_ratio == 1.0
    assert plan.unit_ranges.tolist() == [[0, 64]]
    assert np.all(plan.box_proc_id == 0)


def test_uniform_eight_units_exact_balance():
    plan = uniform_plan(4, 2)
    assert plan.partition_level == 2
    assert plan.balanced and plan.load_ratio == 1.0
    assert np.array_equal(np.diff(plan.unit_ranges, axis=1).ravel(), np.full(8, 8))


def test_concentrated_load_deepens():
    # all receivers in one level-2 box: no level-2 cut can balance two units
    rng = np.random.default_rng(50)
    pts = rng.random((4000, 3)) * 0.24 + 0.005
    boxes = box_indices_of_points(pts, 4)
    uniq, counts = np.unique(boxes, return_counts=True)
    # oracle: exhaustively confirm no level-2 boundary splits the load
    level2 = np.zeros(64, dtype=np.int64)
    anc = (uniq >> np.uint64(6)).astype(np.int64)
    np.add.at(level2, anc, counts)
    total = level2.sum()
    best = min(
        max(level2[:c].sum(), level2[c:].sum()) for c in range(65)
    )
    assert best / (total / 2) > 1.1  # the level-2 optimum violates delta=0.1
    plan = choose_partition(uniq, counts, 4, 2, 1, tolerance=0.1)
    assert plan.partition_level > 2
    assert plan.critical_level == max(plan.partition_level - 1, 2)


def test_unbalanced_plan_flagged():
    # a single box holds everything; nothing can balance it at any level
    boxes = np.array([0], dtype=np.uint64)
    counts = np.array([1000], dtype=np.int64)
    with pytest.raises(InfeasiblePartitionError):
        choose_partition(boxes, counts, 3, 2, 1)
    boxes = np.array([0, 1], dtype=np.uint64)
    counts = np.array([1000, 1], dtype=np.int64)
    plan = choose_partition(boxes, counts, 3, 2, 1, tolerance=0.1)
    assert not plan.balanced
    assert plan.load_ratio > 1.1


def test_owner_of_examples():
    plan = uniform_plan(2, 1)
    assert plan.unit_ranges.tolist() == [[0, 32], [32, 64]]
    assert owner_of(MortonKey(3, 100), plan) == 0  # ancestor 12 -> first half
    assert owner_of(MortonKey(0, 0), plan) == (0, 1)
    for b in range(64):
        assert owner_of(MortonKey(2, b), plan) == plan.box_proc_id[b]


def test_scatter_single_unit_no_halo():
    rng = np.random.default_rng(51)
    src = rng.random((500, 3))
    q = rng.normal(size=500)
    recv = rng.random((400, 3))
    plan = uniform_plan(1, 1)
    result = scatter_points(src, q, recv, plan, 4)
    assert result.halo_copies == 0
    assert result.units[0].src_points.shape[0] == 500
    assert result.units[0].recv_points.shape[0] == 400
    assert np.all(result.units[0].src_owned)


def test_scatter_receiver_partition_exclusive():
    rng = np.random.default_rng(52)
    src = rng.random((1000, 3))
    q = rng.normal(size=1000)
    recv = rng.random((1000, 3))
    plan = uniform_plan(4, 2)
    result = scatter_points(src, q, recv, plan, 3)
    seen = np.concatenate([u.recv_original for u in result.units])
    assert np.array_equal(np.sort(seen), np.arange(1000))
    owned_total = sum(int(u.src_owned.sum()) for u in result.units)
    assert owned_total == 1000


def test_scatter_interior_source_single_copy():
    # a source deep inside unit 0's region at the finest level is needed
    # nowhere else
    plan = uniform_plan(2, 1)
    src = np.array([[0.03, 0.03, 0.03]])  # box (0,0,0) at level 4
    recv = np.array([[0.03, 0.03, 0.03], [0.97, 0.97, 0.97]])
    result = scatter_points(src, np.ones(1), recv, plan, 4)
    copies = sum(u.src_points.shape[0] for u in result.units)
    assert copies == 1
    assert result.halo_copies == 0


def test_scatter_halo_supports_local_near_field():
    # every receiver's full neighborhood must be present on its unit
    rng = np.random.default_rng(53)
    src = rng.random((2000, 3))
    q = rng.normal(size=2000)
    recv = rng.random((2000, 3))
    level = 3
    plan = choose_partition(
        *np.unique(box_indices_of_points(recv, level), return_counts=True),
        level, 2, 1,
    )
    result = scatter_points(src, q, recv, plan, level)
    src_coords = decode_coords(box_indices_of_points(src, level))
    for unit in result.units:
        have = {tuple(p) for p in unit.src_points}
        recv_coords = decode_coords(box_indices_of_points(unit.recv_points, level))
        for rc in np.unique(recv_coords, axis=0):
            near = np.all(np.abs(src_coords - rc) <= 1, axis=1)
            for pt in src[near]:
                assert tuple(pt) in have


def test_scatter_preserves_relative_order():
    rng = np.random.default_rng(54)
    src = rng.random((300, 3))
    q = rng.normal(size=300)
    recv = rng.random((300, 3))
    plan = uniform_plan(2, 1)
    result = scatter_points(src, q, recv, plan, 3)
    order = {tuple(p): i for i, p in enumerate(src)}
    for unit in result.units:
        idx = [order[tuple(p)] for p in unit.src_points]
        assert idx == sorted(idx)


def test_plan_round_trip(tmp_path):
    plan = uniform_plan(4, 2)
    path = tmp_path / "plan.fmms"
    dump_plan(plan, path)
    back = load_plan(path)
    assert back.nodes == plan.nodes
    assert back.units_per_node == plan.units_per_node
    assert back.partition_level == plan.partition_level
    assert back.critical_level == plan.critical_level
    assert np.array_equal(back.box_proc_id, plan.box_proc_id)
    assert np.array_equal(back.unit_ranges, plan.unit_ranges)
    assert back.balanced == plan.balanced
