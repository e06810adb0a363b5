"""Versioned little-endian binary container for structure dumps.

Layout: magic "FMMS", version u32, max level u32, section count u32, then
sections. A section is a 4-byte tag, a metadata map (u32 count, then
u16-length-prefixed UTF-8 key + i64 value pairs) and named arrays (u32
count, then u16-length-prefixed name, u8 dtype code, u8 ndim, u64 shape,
u64 byte length, raw bytes). Round trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError

MAGIC = b"FMMS"
VERSION = 1

_DTYPES = {
    0: np.dtype("<f8"),
    1: np.dtype("<i8"),
    2: np.dtype("<u8"),
    3: np.dtype("<i2"),
    4: np.dtype("<i4"),
    5: np.dtype("|u1"),
    6: np.dtype("<f4"),
}
_CODES = {v: k for k, v in _DTYPES.items()}


@dataclass
class Section:
    tag: str  # exactly 4 ASCII chars
    meta: dict[str, int] = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def _write_str(fh, s: str) -> None:
    raw = s.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<H", fh.read(2))
    return fh.read(n).decode("utf-8")


def write_container(path, max_level: int, sections: list[Section]) -> None:
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, max_level, len(sections)))
        for sec in sections:
            tag = sec.tag.encode("ascii")
            if len(tag) != 4:
                raise DomainError(f"section tag must be 4 bytes, got {sec.tag!r}")
            fh.write(tag)
            fh.write(struct.pack("<I", len(sec.meta)))
            for key, value in sec.meta.items():
                _write_str(fh, key)
                fh.write(struct.pack("<q", int(value)))
            fh.write(struct.pack("<I", len(sec.arrays)))
            for name, arr in sec.arrays.items():
                arr = np.ascontiguousarray(arr)
                le = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
                arr = arr.astype(le, copy=False)
                if arr.dtype not in _CODES:
                    raise DomainError(f"unsupported dtype {arr.dtype} for array {name!r}")
                _write_str(fh, name)
                fh.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
                raw = arr.tobytes()
                fh.write(struct.pack("<Q", len(raw)))
                fh.write(raw)


def read_container(path) -> tuple[int, list[Section]]:
    with open(Path(path), "rb") as fh:
        if fh.read(4) != MAGIC:
            raise DomainError(f"{path}: not a structure container")
        version, max_level, n_sections = struct.unpack("<III", fh.read(12))
        if version != VERSION:
            raise DomainError(f"{path}: unsupported container version {version}")
        sections = []
        for _ in range(n_sections):
            tag = fh.read(4).decode("ascii")
            (n_meta,) = struct.unpack("<I", fh.read(4))
            meta = {}
            for _ in range(n_meta):
                key = _read_str(fh)
                (meta[key],) = struct.unpack("<q", fh.read(8))
            (n_arrays,) = struct.unpack("<I", fh.read(4))
            arrays = {}
            for _ in range(n_arrays):
                name = _read_str(fh)
                code, ndim = struct.unpack("<BB", fh.read(2))
                shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
                (nbytes,) = struct.unpack("<Q", fh.read(8))
                arr = np.frombuffer(fh.read(nbytes), dtype=_DTYPES[code]).reshape(shape)
                arrays[name] = arr.copy()
            sections.append(Section(tag=tag, meta=meta, arrays=arrays))
        return max_level, sections
