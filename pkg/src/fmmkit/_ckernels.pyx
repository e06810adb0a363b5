# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel core: Morton encoding, fixed-grid rank assignment,
neighbor/stencil list construction, and the direct-sum inner loops.

Signatures mirror `_pykernels`; the backend module picks one set at import.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt

cnp.import_array()

IS_COMPILED = True

cdef extern from *:
    """
    static inline long long fk_fetch_add64(long long *p) {
        return __atomic_fetch_add(p, 1LL, __ATOMIC_RELAXED);
    }
    """
    long long fk_fetch_add64(long long *p) nogil


cdef inline unsigned long long _spread(unsigned long long v) nogil:
    v &= 0x1FFFFFULL
    v = (v | (v << 32)) & 0x1F00000000FFFFULL
    v = (v | (v << 16)) & 0x1F0000FF0000FFULL
    v = (v | (v << 8)) & 0x100F00F00F00F00FULL
    v = (v | (v << 4)) & 0x10C30C30C30C30C3ULL
    v = (v | (v << 2)) & 0x1249249249249249ULL
    return v


cdef inline unsigned long long _compact(unsigned long long v) nogil:
    v &= 0x1249249249249249ULL
    v = (v | (v >> 2)) & 0x10C30C30C30C30C3ULL
    v = (v | (v >> 4)) & 0x100F00F00F00F00FULL
    v = (v | (v >> 8)) & 0x1F0000FF0000FFULL
    v = (v | (v >> 16)) & 0x1F00000000FFFFULL
    v = (v | (v >> 32)) & 0x1FFFFFULL
    return v


cdef inline unsigned long long _interleave3(long long ix, long long iy, long long iz) nogil:
    return _spread(<unsigned long long> ix) \
        | (_spread(<unsigned long long> iy) << 1) \
        | (_spread(<unsigned long long> iz) << 2)


cdef inline Py_ssize_t _bisect_left(const unsigned long long[::1] arr,
                                    unsigned long long x) nogil:
    cdef Py_ssize_t lo = 0, hi = arr.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def spread_bits(v):
    from . import _pykernels
    return _pykernels.spread_bits(v)


def compact_bits(v):
    from . import _pykernels
    return _pykernels.compact_bits(v)


def interleave_coords(ix, iy, iz):
    from . import _pykernels
    return _pykernels.interleave_coords(ix, iy, iz)


def deinterleave_indices(idx):
    from . import _pykernels
    return _pykernels.deinterleave_indices(idx)


def encode_points(cnp.ndarray x, cnp.ndarray y, cnp.ndarray z, int level):
    """Morton index of the containing box; upper-boundary points clamp."""
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], i
    cdef long long grid = 1LL << level, hi = (1LL << level) - 1
    cdef long long ix, iy, iz
    out_arr = np.empty(n, dtype=np.uint64)
    cdef unsigned long long[::1] out = out_arr
    with nogil:
        for i in range(n):
            ix = <long long> (xv[i] * grid)
            iy = <long long> (yv[i] * grid)
            iz = <long long> (zv[i] * grid)
            if ix > hi: ix = hi
            if iy > hi: iy = hi
            if iz > hi: iz = hi
            out[i] = _interleave3(ix, iy, iz)
    return out_arr


def assign_box_ranks(cnp.ndarray boxes, Py_ssize_t nbins):
    """Single-pass occupancy histogram with arrival-order ranks (fixed-grid method)."""
    cdef const unsigned long long[::1] b = np.ascontiguousarray(boxes, dtype=np.uint64)
    cdef Py_ssize_t n = b.shape[0], i
    bins_arr = np.zeros(nbins, dtype=np.int64)
    ranks_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] bins = bins_arr
    cdef long long[::1] ranks = ranks_arr
    with nogil:
        for i in range(n):
            ranks[i] = bins[b[i]]
            bins[b[i]] += 1
    return bins_arr, ranks_arr


def assign_box_ranks_atomic(cnp.ndarray boxes, Py_ssize_t nbins, int threads=1):
    """Shared-histogram variant: concurrent atomic fetch-and-add per point.

    Rank order within a box depends on thread interleaving; counts do not.
    """
    cdef const unsigned long long[::1] b = np.ascontiguousarray(boxes, dtype=np.uint64)
    cdef Py_ssize_t n = b.shape[0], i
    bins_arr = np.zeros(nbins, dtype=np.int64)
    ranks_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] bins = bins_arr
    cdef long long[::1] ranks = ranks_arr
    if threads <= 1:
        return assign_box_ranks(boxes, nbins)
    for i in prange(n, nogil=True, num_threads=threads):
        ranks[i] = fk_fetch_add64(&bins[b[i]])
    return bins_arr, ranks_arr


cdef inline int _sorted_adjacent(unsigned long long box, int level,
                                 unsigned long long * out) nogil:
    """All in-grid boxes of the 3x3x3 window around `box`, ascending. Returns count."""
    cdef long long n = 1LL << level
    cdef long long cx = <long long> _compact(box)
    cdef long long cy = <long long> _compact(box >> 1)
    cdef long long cz = <long long> _compact(box >> 2)
    cdef int cnt = 0, i, j
    cdef long long ox, oy, oz
    cdef unsigned long long v
    for oz in range(-1, 2):
        if cz + oz < 0 or cz + oz >= n:
            continue
        for oy in range(-1, 2):
            if cy + oy < 0 or cy + oy >= n:
                continue
            for ox in range(-1, 2):
                if cx + ox < 0 or cx + ox >= n:
                    continue
                out[cnt] = _interleave3(cx + ox, cy + oy, cz + oz)
                cnt += 1
    # insertion sort (<= 27 entries)
    for i in range(1, cnt):
        v = out[i]
        j = i - 1
        while j >= 0 and out[j] > v:
            out[j + 1] = out[j]
            j -= 1
        out[j + 1] = v
    return cnt


def adjacent_segments(cnp.ndarray recv_boxes, cnp.ndarray src_boxes, int level):
    cdef const unsigned long long[::1] recv = np.ascontiguousarray(recv_boxes, dtype=np.uint64)
    cdef const unsigned long long[::1] src = np.ascontiguousarray(src_boxes, dtype=np.uint64)
    cdef Py_ssize_t nr = recv.shape[0], i, pos
    cdef int k, cnt
    cdef unsigned long long cand[27]
    bookmark_arr = np.zeros(nr + 1, dtype=np.int64)
    cdef long long[::1] bookmark = bookmark_arr
    cdef long long total = 0
    # pass 1: counts
    with nogil:
        for i in range(nr):
            cnt = _sorted_adjacent(recv[i], level, cand)
            for k in range(cnt):
                pos = _bisect_left(src, cand[k])
                if pos < src.shape[0] and src[pos] == cand[k]:
                    total += 1
            bookmark[i + 1] = total
    flat_arr = np.empty(total, dtype=np.int64)
    cdef long long[::1] flat = flat_arr
    cdef long long w
    with nogil:
        for i in range(nr):
            w = bookmark[i]
            cnt = _sorted_adjacent(recv[i], level, cand)
            for k in range(cnt):
                pos = _bisect_left(src, cand[k])
                if pos < src.shape[0] and src[pos] == cand[k]:
                    flat[w] = pos
                    w += 1
    return bookmark_arr, flat_arr


cdef inline int _sorted_parent_window(unsigned long long box, int level,
                                      unsigned long long * out) nogil:
    """In-grid neighbors (self included) of `box`'s parent, ascending."""
    return _sorted_adjacent(box >> 3, level - 1, out)


def stencil_segments(cnp.ndarray recv_boxes, cnp.ndarray src_boxes, int level):
    """Translation-stencil segments; see the pure kernel for the contract."""
    cdef Py_ssize_t nr0 = recv_boxes.shape[0]
    if level < 2 or nr0 == 0:
        return (np.zeros(nr0 + 1, dtype=np.int64),
                np.empty(0, dtype=np.int64),
                np.empty(0, dtype=np.int16))
    cdef const unsigned long long[::1] recv = np.ascontiguousarray(recv_boxes, dtype=np.uint64)
    cdef const unsigned long long[::1] src = np.ascontiguousarray(src_boxes, dtype=np.uint64)
    cdef Py_ssize_t nr = recv.shape[0], ns = src.shape[0], i, pos
    cdef int np_, k
    cdef unsigned long long parents[27]
    cdef unsigned long long pbox, child, lo, hi
    cdef long long cx, cy, cz, px, py, pz, ccx, ccy, ccz, dx, dy, dz
    bookmark_arr = np.zeros(nr + 1, dtype=np.int64)
    cdef long long[::1] bookmark = bookmark_arr
    cdef long long total = 0
    with nogil:
        for i in range(nr):
            cx = <long long> _compact(recv[i])
            cy = <long long> _compact(recv[i] >> 1)
            cz = <long long> _compact(recv[i] >> 2)
            np_ = _sorted_parent_window(recv[i], level, parents)
            for k in range(np_):
                pbox = parents[k]
                lo = pbox << 3
                hi = lo + 8
                pos = _bisect_left(src, lo)
                px = <long long> _compact(pbox) << 1
                py = <long long> _compact(pbox >> 1) << 1
                pz = <long long> _compact(pbox >> 2) << 1
                while pos < ns and src[pos] < hi:
                    child = src[pos]
                    ccx = px | (child & 1)
                    ccy = py | ((child >> 1) & 1)
                    ccz = pz | ((child >> 2) & 1)
                    dx = ccx - cx
                    dy = ccy - cy
                    dz = ccz - cz
                    if dx > 1 or dx < -1 or dy > 1 or dy < -1 or dz > 1 or dz < -1:
                        total += 1
                    pos += 1
            bookmark[i + 1] = total
    flat_arr = np.empty(total, dtype=np.int64)
    codes_arr = np.empty(total, dtype=np.int16)
    cdef long long[::1] flat = flat_arr
    cdef short[::1] codes = codes_arr
    cdef long long w
    with nogil:
        for i in range(nr):
            w = bookmark[i]
            cx = <long long> _compact(recv[i])
            cy = <long long> _compact(recv[i] >> 1)
            cz = <long long> _compact(recv[i] >> 2)
            np_ = _sorted_parent_window(recv[i], level, parents)
            for k in range(np_):
                pbox = parents[k]
                lo = pbox << 3
                hi = lo + 8
                pos = _bisect_left(src, lo)
                px = <long long> _compact(pbox) << 1
                py = <long long> _compact(pbox >> 1) << 1
                pz = <long long> _compact(pbox >> 2) << 1
                while pos < ns and src[pos] < hi:
                    child = src[pos]
                    ccx = px | (child & 1)
                    ccy = py | ((child >> 1) & 1)
                    ccz = pz | ((child >> 2) & 1)
                    dx = ccx - cx
                    dy = ccy - cy
                    dz = ccz - cz
                    if dx > 1 or dx < -1 or dy > 1 or dy < -1 or dz > 1 or dz < -1:
                        flat[w] = pos
                        codes[w] = <short> ((dx + 3) + 7 * (dy + 3) + 49 * (dz + 3))
                        w += 1
                    pos += 1
    return bookmark_arr, flat_arr, codes_arr


def near_field(cnp.ndarray sx, cnp.ndarray sy, cnp.ndarray sz, cnp.ndarray sq,
               cnp.ndarray src_bookmark,
               cnp.ndarray nbr_bookmark, cnp.ndarray nbr_list,
               cnp.ndarray rx, cnp.ndarray ry, cnp.ndarray rz,
               cnp.ndarray recv_bookmark):
    """Sequential near-field sums: neighbor segments ascending, points in sorted order."""
    cdef const double[::1] sxv = np.ascontiguousarray(sx, dtype=np.float64)
    cdef const double[::1] syv = np.ascontiguousarray(sy, dtype=np.float64)
    cdef const double[::1] szv = np.ascontiguousarray(sz, dtype=np.float64)
    cdef const double[::1] sqv = np.ascontiguousarray(sq, dtype=np.float64)
    cdef const long long[::1] sbm = np.ascontiguousarray(src_bookmark, dtype=np.int64)
    cdef const long long[::1] nbm = np.ascontiguousarray(nbr_bookmark, dtype=np.int64)
    cdef const long long[::1] nlist = np.ascontiguousarray(nbr_list, dtype=np.int64)
    cdef const double[::1] rxv = np.ascontiguousarray(rx, dtype=np.float64)
    cdef const double[::1] ryv = np.ascontiguousarray(ry, dtype=np.float64)
    cdef const double[::1] rzv = np.ascontiguousarray(rz, dtype=np.float64)
    cdef const long long[::1] rbm = np.ascontiguousarray(recv_bookmark, dtype=np.int64)
    phi_arr = np.zeros(rxv.shape[0], dtype=np.float64)
    cdef double[::1] phi = phi_arr
    cdef Py_ssize_t j, t, r, s, v
    cdef double acc, ddx, ddy, ddz, dist
    with nogil:
        for j in range(rbm.shape[0] - 1):
            for r in range(rbm[j], rbm[j + 1]):
                acc = 0.0
                for t in range(nbm[j], nbm[j + 1]):
                    v = nlist[t]
                    for s in range(sbm[v], sbm[v + 1]):
                        ddx = rxv[r] - sxv[s]
                        ddy = ryv[r] - syv[s]
                        ddz = rzv[r] - szv[s]
                        dist = sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
                        if dist != 0.0:
                            acc += sqv[s] / dist
                phi[r] = acc
    return phi_arr


def direct_potentials(cnp.ndarray sx, cnp.ndarray sy, cnp.ndarray sz, cnp.ndarray sq,
                      cnp.ndarray rx, cnp.ndarray ry, cnp.ndarray rz,
                      int chunk=1024, int threads=1):
    """Brute-force sums; per-receiver accumulation is sequential over sources."""
    cdef const double[::1] sxv = np.ascontiguousarray(sx, dtype=np.float64)
    cdef const double[::1] syv = np.ascontiguousarray(sy, dtype=np.float64)
    cdef const double[::1] szv = np.ascontiguousarray(sz, dtype=np.float64)
    cdef const double[::1] sqv = np.ascontiguousarray(sq, dtype=np.float64)
    cdef const double[::1] rxv = np.ascontiguousarray(rx, dtype=np.float64)
    cdef const double[::1] ryv = np.ascontiguousarray(ry, dtype=np.float64)
    cdef const double[::1] rzv = np.ascontiguousarray(rz, dtype=np.float64)
    cdef Py_ssize_t nr = rxv.shape[0], ns = sxv.shape[0], i, k
    phi_arr = np.zeros(nr, dtype=np.float64)
    cdef double[::1] phi = phi_arr
    cdef double acc, ddx, ddy, ddz, dist
    for i in prange(nr, nogil=True, num_threads=max(1, threads)):
        acc = 0.0
        for k in range(ns):
            ddx = rxv[i] - sxv[k]
            ddy = ryv[i] - syv[k]
            ddz = rzv[i] - szv[k]
            dist = sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
            if dist != 0.0:
                acc = acc + sqv[k] / dist
        phi[i] = acc
    return phi_arr
