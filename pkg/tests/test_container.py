"""Binary container round trips."""

import numpy as np
import pytest

from fmmkit.container import Section, read_container, write_container
from fmmkit.errors import DomainError


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "f": rng.normal(size=(10, 3)),
        "i": rng.integers(-5, 5, size=17),
        "u": rng.integers(0, 100, size=9).astype(np.uint64),
        "s": rng.integers(-3, 3, size=4).astype(np.int16),
    }
    sec = Section(tag="TEST", meta={"alpha": -7, "beta": 12}, arrays=arrays)
    path = tmp_path / "c.fmms"
    write_container(path, 5, [sec])
    max_level, sections = read_container(path)
    assert max_level == 5
    (back,) = sections
    assert back.tag == "TEST"
    assert back.meta == {"alpha": -7, "beta": 12}
    for name, arr in arrays.items():
        assert back.arrays[name].dtype == arr.dtype
        assert np.array_equal(back.arrays[name], arr)
        assert back.arrays[name].tobytes() == arr.tobytes()


def test_multiple_sections(tmp_path):
    path = tmp_path / "c.fmms"
    write_container(
        path,
        3,
        [
            Section(tag="AAAA", arrays={"x": np.arange(4)}),
            Section(tag="BBBB", meta={"k": 1}),
        ],
    )
    _, sections = read_container(path)
    assert [s.tag for s in sections] == ["AAAA", "BBBB"]


def test_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\0" * 32)
    with pytest.raises(DomainError):
        read_container(path)


def test_rejects_bad_tag(tmp_path):
    with pytest.raises(DomainError):
        write_container(tmp_path / "x", 0, [Section(tag="TOOLONG")])
