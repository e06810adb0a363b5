"""Interaction lists: neighbor tables, per-level directories, translation
stencils, and the single-call construction of the whole bundle.

All lists are compacted — they reference only non-empty boxes, as ranks
into the per-level sorted non-empty index arrays, so consumers address data
without search.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import container
from . import backend
from .errors import DomainError
from .pseudosort import SortedPointSet, choose_max_level, sort_points


@dataclass
class NeighborTable:
    """Per non-empty receiver box, the non-empty source boxes adjacent to it.

    Entries of segment j (neighbor_bookmark[j]..neighbor_bookmark[j+1]) are
    ranks into the source non-empty index array, ascending, at most 27.
    """

    neighbor_bookmark: np.ndarray
    neighbor_list: np.ndarray


@dataclass
class LevelDirectory:
    """Per-level non-empty source/receiver box indices, from parent-propagation."""

    max_level: int
    src_boxes: dict[int, np.ndarray]  # level -> ascending uint64
    recv_boxes: dict[int, np.ndarray]

    def src_rank(self, level: int, boxes: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.src_boxes[level], boxes)


@dataclass
class TranslationStencils:
    """Per level: for each non-empty receiver box, its stencil sources.

    Flat segment arrays mirror the neighbor table shape; `codes` packs the
    integer coordinate offset source-minus-receiver per entry.
    """

    bookmark: dict[int, np.ndarray]
    ranks: dict[int, np.ndarray]
    codes: dict[int, np.ndarray]


@dataclass
class FmmStructures:
    max_level: int
    sorted_src: SortedPointSet
    sorted_recv: SortedPointSet
    neighbor_table: NeighborTable
    directory: LevelDirectory
    stencils: TranslationStencils
    build_seconds: dict[str, float] = field(default_factory=dict)


def build_neighbor_table(
    src_non_empty: np.ndarray, recv_non_empty: np.ndarray, level: int
) -> NeighborTable:
    bookmark, flat = backend.kernels.adjacent_segments(
        np.asarray(recv_non_empty, dtype=np.uint64),
        np.asarray(src_non_empty, dtype=np.uint64),
        level,
    )
    return NeighborTable(neighbor_bookmark=bookmark, neighbor_list=flat)


def gather_adjacent_sources(
    table: NeighborTable, sorted_src: SortedPointSet, ordinal: int
) -> tuple[np.ndarray, np.ndarray]:
    """Concatenated source slices for one receiver box; no search involved."""
    if not 0 <= ordinal < table.neighbor_bookmark.shape[0] - 1:
        raise DomainError(f"receiver ordinal {ordinal} out of range")
    seg = table.neighbor_list[
        table.neighbor_bookmark[ordinal] : table.neighbor_bookmark[ordinal + 1]
    ]
    if seg.shape[0] == 0:
        empty = np.empty((0, 3), dtype=np.float64)
        return empty, np.empty(0, dtype=np.float64)
    idx = np.concatenate(
        [
            np.arange(sorted_src.bookmarks[v], sorted_src.bookmarks[v + 1])
            for v in seg
        ]
    )
    charges = sorted_src.charges
    q = charges[idx] if charges is not None else np.ones(idx.shape[0])
    return sorted_src.points[idx], q


def propagate_to_parents(boxes: np.ndarray) -> np.ndarray:
    """Ascending unique parents of an ascending box index array."""
    return np.unique(np.asarray(boxes, dtype=np.uint64) >> np.uint64(3))


def build_level_directory(
    src_boxes_finest: np.ndarray, recv_boxes_finest: np.ndarray, max_level: int
) -> LevelDirectory:
    src = {max_level: np.asarray(src_boxes_finest, dtype=np.uint64)}
    recv = {max_level: np.asarray(recv_boxes_finest, dtype=np.uint64)}
    for level in range(max_level - 1, 1, -1):
        src[level] = propagate_to_parents(src[level + 1])
        recv[level] = propagate_to_parents(recv[level + 1])
    return LevelDirectory(max_level=max_level, src_boxes=src, recv_boxes=recv)


def build_translation_stencils(directory: LevelDirectory) -> TranslationStencils:
    bookmark: dict[int, np.ndarray] = {}
    ranks: dict[int, np.ndarray] = {}
    codes: dict[int, np.ndarray] = {}
    for level in range(2, directory.max_level + 1):
        bm, rk, cd = backend.kernels.stencil_segments(
            directory.recv_boxes[level], directory.src_boxes[level], level
        )
        bookmark[level] = bm
        ranks[level] = rk
        codes[level] = cd
    return TranslationStencils(bookmark=bookmark, ranks=ranks, codes=codes)


def build_all(
    src_points: np.ndarray,
    src_charges: np.ndarray | None,
    recv_points: np.ndarray,
    max_level: int | None = None,
    cluster_size: int | None = None,
    mode: str = "deterministic",
    workers: int = 1,
    histogram_budget_bytes: int | None = None,
) -> FmmStructures:
    """Pseudo-sort both point sets and construct every interaction list.

    Either max_level or cluster_size must be given; an explicit max_level
    wins. Dense histograms are freed before returning.
    """
    import time

    if max_level is None:
        if cluster_size is None:
            raise DomainError("either max_level or cluster_size is required")
        max_level = choose_max_level(np.asarray(src_points).shape[0], cluster_size)
    kwargs = {"mode": mode, "workers": workers}
    if histogram_budget_bytes is not None:
        kwargs["histogram_budget_bytes"] = histogram_budget_bytes
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    sorted_src = sort_points(src_points, src_charges, max_level, **kwargs)
    t1 = time.perf_counter()
    sorted_recv = sort_points(recv_points, None, max_level, **kwargs)
    t2 = time.perf_counter()
    table = build_neighbor_table(
        sorted_src.non_empty_index, sorted_recv.non_empty_index, max_level
    )
    t3 = time.perf_counter()
    directory = build_level_directory(
        sorted_src.non_empty_index, sorted_recv.non_empty_index, max_level
    )
    t4 = time.perf_counter()
    stencils = build_translation_stencils(directory)
    t5 = time.perf_counter()
    timings["sort_sources"] = t1 - t0
    timings["sort_receivers"] = t2 - t1
    timings["neighbor_table"] = t3 - t2
    timings["level_directory"] = t4 - t3
    timings["stencils"] = t5 - t4
    return FmmStructures(
        max_level=max_level,
        sorted_src=sorted_src,
        sorted_recv=sorted_recv,
        neighbor_table=table,
        directory=directory,
        stencils=stencils,
        build_seconds=timings,
    )


def _point_set_arrays(ps: SortedPointSet, prefix: str) -> dict[str, np.ndarray]:
    arrays = {
        f"{prefix}_points": ps.points,
        f"{prefix}_permutation": ps.permutation,
        f"{prefix}_bookmarks": ps.bookmarks,
        f"{prefix}_non_empty": ps.non_empty_index,
        f"{prefix}_boxes": ps.boxes,
    }
    if ps.charges is not None:
        arrays[f"{prefix}_charges"] = ps.charges
    return arrays


def dump_structures(structures: FmmStructures, path) -> None:
    core = container.Section(tag="CORE", meta={"max_level": structures.max_level})
    core.arrays.update(_point_set_arrays(structures.sorted_src, "src"))
    core.arrays.update(_point_set_arrays(structures.sorted_recv, "recv"))
    core.arrays["neighbor_bookmark"] = structures.neighbor_table.neighbor_bookmark
    core.arrays["neighbor_list"] = structures.neighbor_table.neighbor_list
    lvls = container.Section(tag="LVLS", meta={"max_level": structures.max_level})
    for level in range(2, structures.max_level + 1):
        lvls.arrays[f"src_{level}"] = structures.directory.src_boxes[level]
        lvls.arrays[f"recv_{level}"] = structures.directory.recv_boxes[level]
    stnc = container.Section(tag="STNC")
    for level in range(2, structures.max_level + 1):
        stnc.arrays[f"bookmark_{level}"] = structures.stencils.bookmark[level]
        stnc.arrays[f"ranks_{level}"] = structures.stencils.ranks[level]
        stnc.arrays[f"codes_{level}"] = structures.stencils.codes[level]
    container.write_container(path, structures.max_level, [core, lvls, stnc])


def _point_set_from_arrays(arrays: dict[str, np.ndarray], prefix: str, level: int) -> SortedPointSet:
    return SortedPointSet(
        level=level,
        points=arrays[f"{prefix}_points"],
        charges=arrays.get(f"{prefix}_charges"),
        permutation=arrays[f"{prefix}_permutation"],
        bookmarks=arrays[f"{prefix}_bookmarks"],
        non_empty_index=arrays[f"{prefix}_non_empty"],
        boxes=arrays[f"{prefix}_boxes"],
    )


def load_structures(path) -> FmmStructures:
    max_level, sections = container.read_container(path)
    by_tag = {s.tag: s for s in sections}
    core, lvls, stnc = by_tag["CORE"], by_tag["LVLS"], by_tag["STNC"]
    directory = LevelDirectory(
        max_level=max_level,
        src_boxes={l: lvls.arrays[f"src_{l}"] for l in range(2, max_level + 1)},
        recv_boxes={l: lvls.arrays[f"recv_{l}"] for l in range(2, max_level + 1)},
    )
    stencils = TranslationStencils(
        bookmark={l: stnc.arrays[f"bookmark_{l}"] for l in range(2, max_level + 1)},
        ranks={l: stnc.arrays[f"ranks_{l}"] for l in range(2, max_level + 1)},
        codes={l: stnc.arrays[f"codes_{l}"] for l in range(2, max_level + 1)},
    )
    return FmmStructures(
        max_level=max_level,
        sorted_src=_point_set_from_arrays(core.arrays, "src", max_level),
        sorted_recv=_point_set_from_arrays(core.arrays, "recv", max_level),
        neighbor_table=NeighborTable(
            neighbor_bookmark=core.arrays["neighbor_bookmark"],
            neighbor_list=core.arrays["neighbor_list"],
        ),
        directory=directory,
        stencils=stencils,
    )
