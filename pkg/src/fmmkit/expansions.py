"""Truncated multipole/local expansions for the 3D Laplace kernel.

Basis family (pinned by the factorization identity below): complex solid
harmonics with factorial normalization and no Condon-Shortley phase,

    regular   R_n^m(v) = r^n P_n^|m|(cos t) e^{imf} / (n+|m|)!
    singular  S_n^m(v) = (n-|m|)! P_n^|m|(cos t) e^{imf} / r^{n+1}

for which 1/|y-x| = sum_{n,m} R_n^m(x) conj(S_n^m(y)) whenever |x| < |y|.
Both families satisfy exact addition theorems with the sign factor
eps(m1,m2) = (-1)^((|m1|+|m2|-|m1+m2|)/2); the translation operators below
are built from those theorems and are exact up to truncation.

Coefficient vectors are stored real-packed: per degree n the slots are
[A_n^0, sqrt(2) Re A_n^1, sqrt(2) Im A_n^1, ...], p^2 reals total, so that
the plain dot product of two packed vectors equals sum A_n^m conj(B_n^m).
This layout is also the wire format (p^2 little-endian float64).
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

_SQRT2 = np.sqrt(2.0)


def num_coefficients(p: int) -> int:
    return p * p


@dataclass
class Expansion:
    """A truncated expansion attached to a box center.

    kind is "multipole" (valid outside the box) or "local" (valid inside);
    coefficients use the real-packed layout, exactly p^2 finite values.
    """

    kind: str
    center: tuple[float, float, float]
    p: int
    coefficients: np.ndarray

    def __post_init__(self):
        if self.kind not in ("multipole", "local"):
            raise DomainError(f"expansion kind must be multipole or local, got {self.kind!r}")
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.coefficients.shape != (self.p * self.p,):
            raise DomainError(
                f"expected {self.p * self.p} coefficients, got shape {self.coefficients.shape}"
            )
        if not np.all(np.isfinite(self.coefficients)):
            raise DomainError("expansion coefficients must be finite")


def _tri_index(n: np.ndarray, m: np.ndarray) -> np.ndarray:
    return n * n + n + m


def eval_regular(vectors: np.ndarray, p: int) -> np.ndarray:
    """Regular basis values, complex triangle layout, shape (k, p^2).

    A single 3-vector yields a flat (p^2,) array.
    """
    single = np.asarray(vectors).ndim == 1
    v = np.asarray(vectors, dtype=np.float64).reshape(-1, 3)
    x, y, z = v[:, 0], v[:, 1], v[:, 2]
    r2 = x * x + y * y + z * z
    w = x + 1j * y
    out = np.zeros((v.shape[0], p * p), dtype=np.complex128)
    out[:, 0] = 1.0
    for m in range(p):
        if m > 0:
            out[:, _tri_index(m, m)] = out[:, _tri_index(m - 1, m - 1)] * w / (2 * m)
        for n in range(m + 1, p):
            acc = (2 * n - 1) * z * out[:, _tri_index(n - 1, m)]
            if n - 2 >= m:
                acc = acc - r2 * out[:, _tri_index(n - 2, m)]
            out[:, _tri_index(n, m)] = acc / ((n - m) * (n + m))
    for n in range(1, p):
        for m in range(1, n + 1):
            out[:, _tri_index(n, -m)] = np.conj(out[:, _tri_index(n, m)])
    return out[0] if single else out


def eval_singular(vectors: np.ndarray, p: int) -> np.ndarray:
    """Singular basis values, complex triangle layout, shape (k, p^2).

    A single 3-vector yields a flat (p^2,) array.
    """
    single = np.asarray(vectors).ndim == 1
    v = np.asarray(vectors, dtype=np.float64).reshape(-1, 3)
    x, y, z = v[:, 0], v[:, 1], v[:, 2]
    r2 = x * x + y * y + z * z
    if np.any(r2 == 0.0):
        raise DomainError("singular basis is undefined at zero radius")
    inv_r2 = 1.0 / r2
    w = x + 1j * y
    out = np.zeros((v.shape[0], p * p), dtype=np.complex128)
    out[:, 0] = np.sqrt(inv_r2)
    for m in range(p):
        if m > 0:
            out[:, _tri_index(m, m)] = (
                (2 * m - 1) * w * out[:, _tri_index(m - 1, m - 1)] * inv_r2
            )
        for n in range(m + 1, p):
            acc = (2 * n - 1) * z * out[:, _tri_index(n - 1, m)]
            if n - 2 >= m:
                acc = acc - ((n + m - 1) * (n - m - 1)) * out[:, _tri_index(n - 2, m)]
            out[:, _tri_index(n, m)] = acc * inv_r2
    for n in range(1, p):
        for m in range(1, n + 1):
            out[:, _tri_index(n, -m)] = np.conj(out[:, _tri_index(n, m)])
    return out[0] if single else out


def _pack_maps(p: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per packed slot: source triangle index, imag flag, scale."""
    tri = np.empty(p * p, dtype=np.int64)
    is_im = np.zeros(p * p, dtype=bool)
    scale = np.ones(p * p, dtype=np.float64)
    for n in range(p):
        base = n * n
        tri[base] = _tri_index(n, 0)
        for m in range(1, n + 1):
            tri[base + 2 * m - 1] = _tri_index(n, m)
            tri[base + 2 * m] = _tri_index(n, m)
            is_im[base + 2 * m] = True
            scale[base + 2 * m - 1] = _SQRT2
            scale[base + 2 * m] = _SQRT2
    return tri, is_im, scale


_PACK_CACHE: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _maps(p: int):
    if p not in _PACK_CACHE:
        _PACK_CACHE[p] = _pack_maps(p)
    return _PACK_CACHE[p]


def pack(coeffs: np.ndarray, p: int) -> np.ndarray:
    """Complex triangle -> real-packed layout (last axis)."""
    tri, is_im, scale = _maps(p)
    c = np.asarray(coeffs)
    return scale * np.where(is_im, c[..., tri].imag, c[..., tri].real)


def unpack(packed: np.ndarray, p: int) -> np.ndarray:
    """Real-packed -> complex triangle layout (last axis)."""
    v = np.asarray(packed, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (p * p,), dtype=np.complex128)
    for n in range(p):
        base = n * n
        out[..., _tri_index(n, 0)] = v[..., base]
        for m in range(1, n + 1):
            c = (v[..., base + 2 * m - 1] + 1j * v[..., base + 2 * m]) / _SQRT2
            out[..., _tri_index(n, m)] = c
            out[..., _tri_index(n, -m)] = np.conj(c)
    return out


def eval_regular_packed(vectors: np.ndarray, p: int) -> np.ndarray:
    """p^2 real basis values; dot with eval_singular_packed gives 1/|y-x|."""
    return pack(eval_regular(vectors, p), p)


def eval_singular_packed(vectors: np.ndarray, p: int) -> np.ndarray:
    return pack(eval_singular(vectors, p), p)


def packed_degrees(p: int) -> np.ndarray:
    """Expansion degree of each packed slot."""
    return np.repeat(np.arange(p), 2 * np.arange(p) + 1)


def _slot_nm(p: int) -> tuple[np.ndarray, np.ndarray]:
    n = np.repeat(np.arange(p), 2 * np.arange(p) + 1)
    m = np.concatenate([np.arange(-k, k + 1) for k in range(p)])
    return n, m


def _eps(m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    k = (np.abs(m1) + np.abs(m2) - np.abs(m1 + m2)) // 2
    return np.where(k % 2 == 0, 1.0, -1.0)


def _pack_basis_mats(p: int) -> tuple[np.ndarray, np.ndarray]:
    """U: packed -> complex triangle; V: complex triangle -> packed."""
    eye = np.eye(p * p)
    U = unpack(eye, p)  # rows are packed unit vectors -> columns via transpose
    # unpack maps the last axis; build U so that complex = U @ packed
    U = U.T.copy()
    V = np.zeros((p * p, p * p), dtype=np.complex128)
    tri, is_im, scale = _maps(p)
    for s in range(p * p):
        nn = math.isqrt(int(tri[s]))
        m = int(tri[s]) - nn * nn - nn
        if is_im[s]:
            # packed_s = scale * Im(c_tri) = scale * (c - conj(c)) / (2i)
            V[s, tri[s]] += scale[s] / 2j
            V[s, _tri_index(nn, -m)] -= scale[s] / 2j
        elif m == 0:
            V[s, tri[s]] = 1.0
        else:
            V[s, tri[s]] = scale[s] / 2
            V[s, _tri_index(nn, -m)] = scale[s] / 2
    return U, V


_BASIS_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _basis_mats(p: int):
    if p not in _BASIS_CACHE:
        _BASIS_CACHE[p] = _pack_basis_mats(p)
    return _BASIS_CACHE[p]


def _to_packed_matrix(cmat: np.ndarray, p: int) -> np.ndarray:
    U, V = _basis_mats(p)
    return np.real(V @ cmat @ U)


def multipole_shift_matrix(t: np.ndarray, p: int) -> np.ndarray:
    """Re-center a multipole expansion by t = old center - new center.

    Packed real (p^2, p^2) operator; new = mat @ old.
    """
    n_out, m_out = _slot_nm(p)
    n_in, m_in = _slot_nm(p)
    dn = n_out[:, None] - n_in[None, :]
    dm = m_out[:, None] - m_in[None, :]
    valid = (dn >= 0) & (np.abs(dm) <= dn)
    Rt = eval_regular(np.asarray(t, dtype=np.float64).reshape(1, 3), p)[0]
    tri = _tri_index(np.where(valid, dn, 0), np.where(valid, dm, 0))
    cmat = np.where(valid, _eps(m_in[None, :], dm) * Rt[tri], 0.0)
    return _to_packed_matrix(cmat, p)


def local_shift_matrix(d: np.ndarray, p: int) -> np.ndarray:
    """Re-center a local expansion by d = new center - old center."""
    n_out, m_out = _slot_nm(p)
    n_in, m_in = _slot_nm(p)
    dn = n_in[None, :] - n_out[:, None]
    dm = m_in[None, :] - m_out[:, None]
    valid = (dn >= 0) & (np.abs(dm) <= dn)
    Rd = eval_regular(np.asarray(d, dtype=np.float64).reshape(1, 3), p)[0]
    tri = _tri_index(np.where(valid, dn, 0), np.where(valid, dm, 0))
    cmat = np.where(valid, _eps(m_out[:, None], dm) * np.conj(Rd[tri]), 0.0)
    return _to_packed_matrix(cmat, p)


def multipole_to_local_matrix(t: np.ndarray, p: int) -> np.ndarray:
    """Convert a multipole about c_s to a local about c_r, t = c_r - c_s."""
    n_out, m_out = _slot_nm(p)  # local (k, mu)
    n_in, m_in = _slot_nm(p)  # multipole (n1, m1)
    dn = n_out[:, None] + n_in[None, :]
    dm = m_in[None, :] - m_out[:, None]
    St = eval_singular(np.asarray(t, dtype=np.float64).reshape(1, 3), 2 * p)[0]
    tri = _tri_index(dn, dm)
    sign = np.where(n_out[:, None] % 2 == 0, 1.0, -1.0)
    cmat = sign * _eps(m_in[None, :], -m_out[:, None]) * np.conj(St[tri])
    return _to_packed_matrix(cmat, p)


_OFFSET_RANGE = 7  # stencil offsets per axis in [-3, 3]


def decode_offset(code: int) -> tuple[int, int, int]:
    """Inverse of the stencil offset packing (dx+3) + 7(dy+3) + 49(dz+3)."""
    dx = code % 7 - 3
    dy = (code // 7) % 7 - 3
    dz = code // 49 - 3
    return dx, dy, dz


class OperatorCache:
    """Unit-scale translation matrices, reused across levels.

    Box-size scaling is diagonal in the expansion degree, so one matrix per
    integer offset serves every level. The multipole-to-local family is
    byte-budgeted with LRU eviction (up to 316 offsets can occur).
    """

    def __init__(self, p: int, m2l_budget_bytes: int = 512 << 20):
        self.p = p
        self.degrees = packed_degrees(p)
        self._shift_mats: dict[tuple[str, int], np.ndarray] = {}
        self._m2l: OrderedDict[int, np.ndarray] = OrderedDict()
        self._m2l_budget = m2l_budget_bytes

    @staticmethod
    def _octant_offset(octant: int) -> np.ndarray:
        # child center minus parent center, in child-box-size units
        return np.array(
            [(octant & 1) - 0.5, ((octant >> 1) & 1) - 0.5, ((octant >> 2) & 1) - 0.5]
        )

    def multipole_shift(self, octant: int) -> np.ndarray:
        key = ("m2m", octant)
        if key not in self._shift_mats:
            t = self._octant_offset(octant)
            self._shift_mats[key] = multipole_shift_matrix(t, self.p)
        return self._shift_mats[key]

    def local_shift(self, octant: int) -> np.ndarray:
        key = ("l2l", octant)
        if key not in self._shift_mats:
            d = self._octant_offset(octant)
            self._shift_mats[key] = local_shift_matrix(d, self.p)
        return self._shift_mats[key]

    def multipole_to_local(self, code: int) -> np.ndarray:
        if code in self._m2l:
            self._m2l.move_to_end(code)
            return self._m2l[code]
        offset = decode_offset(code)
        if max(abs(c) for c in offset) < 2:
            # adjacent boxes never appear in a valid stencil
            raise DomainError(
                f"translation between adjacent boxes (offset {offset}); "
                "interaction lists are corrupt"
            )
        k = np.array(offset, dtype=np.float64)
        mat = multipole_to_local_matrix(-k, self.p)
        nbytes = mat.nbytes
        while self._m2l and (len(self._m2l) + 1) * nbytes > self._m2l_budget:
            self._m2l.popitem(last=False)
        self._m2l[code] = mat
        return self._m2l[code]
