"""End-to-end evaluation engine against the brute-force reference."""

import numpy as np
import pytest

from fmmkit import (
    DomainError,
    build_all,
    direct_sum,
    evaluate,
    far_field_potentials,
    near_field_potentials,
)


def test_direct_sum_unit_distance():
    phi = direct_sum(np.array([[0.0, 0.0, 0.0]]), np.array([1.0]), np.array([[1.0, 0.0, 0.0]]))
    assert phi.tolist() == [1.0]


def test_direct_sum_dipole_symmetry():
    src = np.array([[0.4, 0.5, 0.5], [0.6, 0.5, 0.5]])
    q = np.array([1.0, -1.0])
    recv = np.array([[0.5, 0.9, 0.5]])
    assert direct_sum(src, q, recv)[0] == pytest.approx(0.0, abs=1e-15)


def test_direct_sum_skips_coincident():
    pts = np.array([[0.25, 0.25, 0.25], [0.75, 0.25, 0.25]])
    q = np.ones(2)
    phi = direct_sum(pts, q, pts)
    assert np.allclose(phi, 2.0)  # only the other point contributes, 1/0.5


def test_near_only_single_box_matches_direct_bitwise():
    rng = np.random.default_rng(31)
    src = rng.random((257, 3))
    q = rng.normal(size=257)
    recv = rng.random((101, 3))
    st = build_all(src, q, recv, max_level=0)
    phi = evaluate(st, p=4)
    # same accumulation order: feed the reference the pseudo-sorted sources
    exact_sorted = direct_sum(st.sorted_src.points, st.sorted_src.charges, recv)
    assert np.array_equal(np.sort(phi), np.sort(exact_sorted))
    # receiver order: undo the permutation explicitly
    back = np.empty_like(phi)
    back[st.sorted_recv.permutation] = direct_sum(
        st.sorted_src.points, st.sorted_src.charges, st.sorted_recv.points
    )
    assert np.array_equal(phi, back)


def test_near_only_level1_matches_direct_bitwise():
    rng = np.random.default_rng(32)
    src = rng.random((300, 3))
    q = rng.normal(size=300)
    recv = rng.random((300, 3))
    st = build_all(src, q, recv, max_level=1)
    phi_sorted_order = near_field_potentials(st)
    exact = direct_sum(st.sorted_src.points, st.sorted_src.charges, st.sorted_recv.points)
    assert np.array_equal(phi_sorted_order, exact)


def test_near_field_restricted_to_adjacent_pairs():
    rng = np.random.default_rng(33)
    src = rng.random((600, 3))
    q = rng.normal(size=600)
    recv = rng.random((200, 3))
    st = build_all(src, q, recv, max_level=2)
    near = near_field_potentials(st)
    # oracle: direct sums over sources within one box step, per receiver
    from fmmkit import box_indices_of_points
    from tests_support import decode_coords

    sboxes = decode_coords(box_indices_of_points(st.sorted_src.points, 2))
    rboxes = decode_coords(box_indices_of_points(st.sorted_recv.points, 2))
    for i in rng.integers(0, 200, size=20):
        mask = np.all(np.abs(sboxes - rboxes[i]) <= 1, axis=1)
        expect = direct_sum(
            st.sorted_src.points[mask],
            st.sorted_src.charges[mask],
            st.sorted_recv.points[i : i + 1],
        )[0]
        assert near[i] == pytest.approx(expect, rel=1e-12)


def test_convergence_in_truncation_number():
    rng = np.random.default_rng(34)
    n = 1024
    src = rng.random((n, 3))
    q = rng.normal(size=n)
    recv = rng.random((n, 3))
    st = build_all(src, q, recv, max_level=3)
    exact = direct_sum(src, q, recv)
    rms = []
    for p in (4, 8, 12):
        phi = evaluate(st, p)
        rms.append(np.sqrt(np.mean((phi - exact) ** 2) / np.mean(exact**2)))
    assert rms[0] > rms[1] > rms[2]
    assert rms[0] / rms[2] > 100


def test_sphere_distribution_converges():
    rng = np.random.default_rng(35)
    v = rng.normal(size=(2048, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    pts = v * 0.45 + 0.5
    q = rng.normal(size=2048)
    st = build_all(pts, q, pts, max_level=4)
    exact = direct_sum(pts, q, pts)
    rms = []
    for p in (4, 8, 12):
        phi = evaluate(st, p)
        rms.append(np.sqrt(np.mean((phi - exact) ** 2) / np.mean(exact**2)))
    assert rms[0] > rms[1] > rms[2]


def test_superposition_linearity():
    rng = np.random.default_rng(36)
    n = 512
    src = rng.random((n, 3))
    q1 = rng.normal(size=n)
    q2 = rng.normal(size=n)
    recv = rng.random((n, 3))
    p = 8
    st1 = build_all(src, q1, recv, max_level=3)
    st2 = build_all(src, q2, recv, max_level=3)
    st12 = build_all(src, q1 + q2, recv, max_level=3)
    phi1 = evaluate(st1, p)
    phi2 = evaluate(st2, p)
    phi12 = evaluate(st12, p)
    np.testing.assert_allclose(phi12, phi1 + phi2, rtol=1e-10, atol=1e-12)


def test_translation_invariance_box_aligned():
    # shifting everything by one level-2 box moves the assignment uniformly
    # at every expansion level, so the near/far decomposition is congruent
    # and only summation-order rounding can differ
    rng = np.random.default_rng(37)
    n = 700
    level = 3
    h = 0.25
    # quantize to the 2^-20 grid so the shifted coordinates are exact
    quantum = 2.0**-20
    src = np.floor(rng.uniform(0.0, 1.0 - h, size=(n, 3)) / quantum) * quantum
    q = rng.normal(size=n)
    recv = np.floor(rng.uniform(0.0, 1.0 - h, size=(n, 3)) / quantum) * quantum
    phi_a = evaluate(build_all(src, q, recv, max_level=level), p=6)
    phi_b = evaluate(build_all(src + h, q, recv + h, max_level=level), p=6)
    scale = np.max(np.abs(phi_a))
    assert np.max(np.abs(phi_a - phi_b)) < 1e-11 * scale


def test_translation_invariance_generic_shift():
    rng = np.random.default_rng(38)
    n = 600
    src = rng.uniform(0.05, 0.9, size=(n, 3))
    q = rng.normal(size=n)
    recv = rng.uniform(0.05, 0.9, size=(n, 3))
    p = 10
    delta = np.array([0.013, 0.007, 0.021])
    phi_a = evaluate(build_all(src, q, recv, max_level=3), p)
    phi_b = evaluate(build_all(src + delta, q, recv + delta, max_level=3), p)
    exact = direct_sum(src, q, recv)
    tol = 50 * np.sqrt(np.mean((phi_a - exact) ** 2))
    assert np.max(np.abs(phi_a - phi_b)) < tol


def test_far_field_zero_without_expansion_levels():
    rng = np.random.default_rng(39)
    src = rng.random((50, 3))
    st = build_all(src, np.ones(50), src, max_level=1)
    assert np.all(far_field_potentials(st, 6) == 0.0)


def test_order_out_of_range():
    rng = np.random.default_rng(40)
    src = rng.random((10, 3))
    st = build_all(src, np.ones(10), src, max_level=2)
    with pytest.raises(DomainError):
        evaluate(st, 0)
    with pytest.raises(DomainError):
        evaluate(st, 99)
