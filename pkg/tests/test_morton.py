"""Box indexing, geometry and neighborhood queries."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmmkit import (
    BoxCoords,
    CapacityError,
    DomainError,
    MortonKey,
    adjacent_boxes,
    box_center,
    box_index_of_point,
    box_indices_of_points,
    children,
    deinterleave,
    interaction_boxes,
    interleave,
    parent,
)
from fmmkit.morton import normalize_points


def oracle_interleave(level, ix, iy, iz):
    """Bit-by-bit reference: interleave each coordinate's binary expansion."""
    index = 0
    for k in range(level):
        digit = (((iz >> k) & 1) << 2) | (((iy >> k) & 1) << 1) | ((ix >> k) & 1)
        index |= digit << (3 * k)
    return index


def test_interleave_examples():
    assert interleave(BoxCoords(1, 1, 1, 1)).index == 7
    assert interleave(BoxCoords(0, 0, 0, 0)).index == 0
    assert interleave(BoxCoords(2, 2, 1, 0)).index == 10
    assert interleave(BoxCoords(2, 2, 1, 0)).index == oracle_interleave(2, 2, 1, 0)


def test_deinterleave_examples():
    assert deinterleave(MortonKey(1, 7)) == BoxCoords(1, 1, 1, 1)
    assert deinterleave(MortonKey(2, 0)) == BoxCoords(2, 0, 0, 0)
    assert deinterleave(MortonKey(2, 10)) == BoxCoords(2, 2, 1, 0)


def test_round_trip_exhaustive_low_levels():
    for level in (0, 1, 2):
        n = 1 << level
        for ix in range(n):
            for iy in range(n):
                for iz in range(n):
                    c = BoxCoords(level, ix, iy, iz)
                    key = interleave(c)
                    assert key.index == oracle_interleave(level, ix, iy, iz)
                    assert deinterleave(key) == c


@settings(max_examples=200, deadline=None)
@given(
    level=st.integers(min_value=3, max_value=20),
    frac=st.tuples(st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True)),
)
def test_round_trip_randomized(level, frac):
    n = 1 << level
    c = BoxCoords(level, int(frac[0] * n), int(frac[1] * n), int(frac[2] * n))
    assert deinterleave(interleave(c)) == c


def test_level_capacity():
    with pytest.raises(CapacityError):
        interleave(BoxCoords(21, 0, 0, 0))


def test_box_index_of_point_examples():
    assert box_index_of_point((0.1, 0.1, 0.1), 1).index == 0
    assert box_index_of_point((0.9, 0.9, 0.9), 1).index == 7
    assert box_index_of_point((0.55, 0.3, 0.05), 2).index == 10


def test_upper_boundary_clamps():
    key = box_index_of_point((1.0, 1.0, 1.0), 3)
    assert deinterleave(key) == BoxCoords(3, 7, 7, 7)


def test_box_center_examples():
    assert box_center(MortonKey(0, 0)) == (0.5, 0.5, 0.5)
    assert box_center(MortonKey(1, 7)) == (0.75, 0.75, 0.75)
    assert box_center(MortonKey(2, 10)) == (0.625, 0.375, 0.125)


def test_parent_children():
    assert parent(MortonKey(2, 10)) == MortonKey(1, 1)
    kids = children(MortonKey(0, 0))
    assert [k.index for k in kids] == list(range(8))
    assert all(k.level == 1 for k in kids)
    for k in children(MortonKey(3, 291)):
        assert parent(k) == MortonKey(3, 291)


def test_parent_of_root_rejected():
    with pytest.raises(DomainError):
        parent(MortonKey(0, 0))


def test_adjacent_counts():
    assert len(adjacent_boxes(MortonKey(1, 0))) == 8
    interior = interleave(BoxCoords(2, 1, 1, 1))
    assert len(adjacent_boxes(interior)) == 27
    assert adjacent_boxes(MortonKey(0, 0)) == [MortonKey(0, 0)]


def test_adjacent_symmetry_randomized():
    rng = np.random.default_rng(3)
    for _ in range(30):
        level = int(rng.integers(1, 5))
        n = 1 << level
        a = interleave(BoxCoords(level, *rng.integers(0, n, 3)))
        for b in adjacent_boxes(a):
            assert a in adjacent_boxes(b)


def oracle_interaction(key):
    """Grid enumeration: parent-adjacent children minus own adjacency."""
    level, ix, iy, iz = deinterleave(key)
    if level < 2:
        return []
    n = 1 << level
    out = []
    for jx in range(n):
        for jy in range(n):
            for jz in range(n):
                parent_adjacent = (
                    abs((jx >> 1) - (ix >> 1)) <= 1
                    and abs((jy >> 1) - (iy >> 1)) <= 1
                    and abs((jz >> 1) - (iz >> 1)) <= 1
                )
                own_adjacent = (
                    abs(jx - ix) <= 1 and abs(jy - iy) <= 1 and abs(jz - iz) <= 1
                )
                if parent_adjacent and not own_adjacent:
                    out.append(interleave(BoxCoords(level, jx, jy, jz)))
    return sorted(out, key=lambda k: k.index)


def test_interaction_interior_count():
    key = interleave(BoxCoords(3, 3, 3, 3))
    boxes = interaction_boxes(key)
    assert len(boxes) == 189
    assert boxes == oracle_interaction(key)


def test_interaction_level2_corner():
    key = interleave(BoxCoords(2, 0, 0, 0))
    boxes = interaction_boxes(key)
    assert len(boxes) == 56
    assert boxes == oracle_interaction(key)


def test_interaction_level2_complement():
    for index in (0, 21, 63):
        key = MortonKey(2, index)
        union = {k.index for k in interaction_boxes(key)} | {
            k.index for k in adjacent_boxes(key)
        }
        assert union == set(range(64))
        assert not (
            {k.index for k in interaction_boxes(key)}
            & {k.index for k in adjacent_boxes(key)}
        )


def test_interaction_empty_at_coarse_levels():
    assert interaction_boxes(MortonKey(0, 0)) == []
    assert interaction_boxes(MortonKey(1, 3)) == []


def test_near_far_split_partitions_parent_window():
    rng = np.random.default_rng(11)
    for _ in range(20):
        level = int(rng.integers(2, 6))
        n = 1 << level
        b = interleave(BoxCoords(level, *rng.integers(0, n, 3)))
        window = {
            c.index for pnb in adjacent_boxes(parent(b)) for c in children(pnb)
        }
        near = {k.index for k in adjacent_boxes(b)}
        far = {k.index for k in interaction_boxes(b)}
        assert near | far == window
        assert not near & far


def test_box_index_parent_consistency():
    rng = np.random.default_rng(5)
    pts = rng.random((50, 3))
    for level in range(1, 6):
        coarse = box_indices_of_points(pts, level - 1)
        fine = box_indices_of_points(pts, level)
        assert np.array_equal(fine >> np.uint64(3), coarse)


def test_normalize_points():
    rng = np.random.default_rng(9)
    pts = rng.normal(size=(100, 3)) * 50 + 7
    scaled, lo, extent = normalize_points(pts)
    assert scaled.min() >= 0.0
    assert scaled.max() <= 1.0
    np.testing.assert_allclose(scaled * extent + lo, pts, rtol=1e-12, atol=1e-9)
