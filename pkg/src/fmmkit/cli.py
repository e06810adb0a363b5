"""Benchmark and verification driver.

Modes
-----
build     construct all structures, report per-phase timings and box counts
          (CSV columns: name,value)
evaluate  build + evaluate, report error against the brute-force reference
          (subsampled above 2^15 receivers); with --nodes > 1 also compares
          the simulated multi-node run to the single-node run
          (CSV columns: name,value)
verify    run the oracle suite on the generated instance
          (CSV columns: check,status,detail) — exit code 0 iff all pass
bench     build-time scaling table over problem sizes, one row per
          available kernel backend
          (CSV columns: n_sources,n_receivers,max_level,backend,run,build_seconds)

Data generation is seeded with numpy's Philox via spawned seed sequences,
one stream per point array, so any process regenerates identical data from
the run parameters alone.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import dataclass

import numpy as np

from .backend import backend_name, get_kernels
from .errors import FmmError
from .exchange import evaluate_distributed
from .fmm import direct_sum, evaluate
from .lists import build_all
from .morton import box_indices_of_points
from .pseudosort import choose_max_level

SPHERE_RADIUS = 0.45
SPHERE_CENTER = 0.5
ORACLE_SUBSAMPLE = 4096
ORACLE_FULL_LIMIT = 2**15


@dataclass
class RunSpec:
    n_sources: int
    n_receivers: int
    dist: str = "uniform"
    cluster_size: int | None = None
    max_level: int | None = None
    p: int = 8
    nodes: int = 1
    units_per_node: int = 1
    seed: int = 0
    mode: str = "build"
    out: str | None = None

    def resolve_level(self) -> int:
        if self.max_level is not None:
            return self.max_level
        if self.cluster_size is None:
            raise FmmError("either --lmax or --cluster-size is required")
        return choose_max_level(self.n_sources, self.cluster_size)


def generate(spec: RunSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded source/charge/receiver generation (uniform cube or sphere shell)."""
    streams = np.random.SeedSequence(spec.seed).spawn(3)
    gen_src, gen_recv, gen_q = (np.random.Generator(np.random.Philox(s)) for s in streams)

    def draw(gen, n):
        if spec.dist == "uniform":
            return gen.random((n, 3))
        if spec.dist == "sphere":
            v = gen.normal(size=(n, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            return v * SPHERE_RADIUS + SPHERE_CENTER
        raise FmmError(f"unknown distribution {spec.dist!r}")

    src = draw(gen_src, spec.n_sources)
    recv = draw(gen_recv, spec.n_receivers)
    charges = gen_q.normal(size=spec.n_sources)
    return src, charges, recv


def _oracle_receivers(spec: RunSpec, recv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Receiver subset for the brute-force reference (full set when small)."""
    if recv.shape[0] <= ORACLE_FULL_LIMIT:
        return recv, np.arange(recv.shape[0])
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([spec.seed, 0xFACE])))
    idx = gen.choice(recv.shape[0], size=ORACLE_SUBSAMPLE, replace=False)
    idx.sort()
    return recv[idx], idx


def _run_build(spec: RunSpec) -> tuple[list[list], list[str], bool]:
    src, q, recv = generate(spec)
    level = spec.resolve_level()
    t0 = time.perf_counter()
    st = build_all(src, q, recv, max_level=level)
    total = time.perf_counter() - t0
    rows = [["backend", backend_name()], ["max_level", level]]
    rows += [[f"{k}_seconds", f"{v:.6f}"] for k, v in st.build_seconds.items()]
    rows += [
        ["total_seconds", f"{total:.6f}"],
        ["src_non_empty_boxes", st.sorted_src.num_boxes],
        ["recv_non_empty_boxes", st.sorted_recv.num_boxes],
        ["neighbor_entries", st.neighbor_table.neighbor_list.shape[0]],
        ["stencil_entries", sum(r.shape[0] for r in st.stencils.ranks.values())],
    ]
    return rows, ["name", "value"], True


def _run_evaluate(spec: RunSpec) -> tuple[list[list], list[str], bool]:
    src, q, recv = generate(spec)
    level = spec.resolve_level()
    st = build_all(src, q, recv, max_level=level)
    phi = evaluate(st, spec.p)
    oracle_recv, idx = _oracle_receivers(spec, recv)
    exact = direct_sum(src, q, oracle_recv)
    sample = phi[idx]
    rel_rms = float(np.sqrt(np.mean((sample - exact) ** 2) / np.mean(exact**2)))
    max_rel = float(np.max(np.abs(sample - exact)) / np.max(np.abs(exact)))
    rows = [
        ["backend", backend_name()],
        ["max_level", level],
        ["p", spec.p],
        ["oracle_receivers", oracle_recv.shape[0]],
        ["rel_rms_error_vs_direct", f"{rel_rms:.6e}"],
        ["max_rel_error_vs_direct", f"{max_rel:.6e}"],
    ]
    if spec.nodes > 1:
        phi_dist, ledger, _ = evaluate_distributed(
            src, q, recv, spec.p, spec.nodes, spec.units_per_node, max_level=level
        )
        diff = float(np.max(np.abs(phi_dist - phi)) / np.max(np.abs(phi)))
        rows += [
            ["nodes", spec.nodes],
            ["units_per_node", spec.units_per_node],
            ["max_rel_diff_vs_single_node", f"{diff:.6e}"],
            ["exchange_bytes_to_manager", ledger.manager_received_bytes],
            ["exchange_bytes_from_manager", ledger.manager_sent_bytes],
            ["merged_roots", ledger.merged_roots],
            ["halo_copies", ledger.halo_copies],
        ]
    return rows, ["name", "value"], True


def _verify_neighbor_lists(st) -> bool:
    """O(B^2)-style grid-adjacency oracle over the built table."""
    from . import backend

    src = st.sorted_src.non_empty_index
    recv = st.sorted_recv.non_empty_index
    six, siy, siz = (a.astype(np.int64) for a in backend.kernels.deinterleave_indices(src))
    rix, riy, riz = (a.astype(np.int64) for a in backend.kernels.deinterleave_indices(recv))
    table = st.neighbor_table
    for j in range(recv.shape[0]):
        near = (
            (np.abs(six - rix[j]) <= 1)
            & (np.abs(siy - riy[j]) <= 1)
            & (np.abs(siz - riz[j]) <= 1)
        )
        expect = np.flatnonzero(near)
        got = table.neighbor_list[table.neighbor_bookmark[j] : table.neighbor_bookmark[j + 1]]
        if not np.array_equal(expect, got):
            return False
    return True


def _verify_sort_contract(st) -> bool:
    ss = st.sorted_src
    if not np.array_equal(np.sort(ss.permutation), np.arange(ss.num_points)):
        return False
    counts = np.diff(ss.bookmarks)
    if ss.num_boxes and (
        not np.all(counts > 0)
        or ss.bookmarks[0] != 0
        or ss.bookmarks[-1] != ss.num_points
    ):
        return False
    boxes = box_indices_of_points(ss.points, st.max_level)
    grouped = np.repeat(ss.non_empty_index, counts)
    return np.array_equal(boxes, grouped)


def _verify_coverage(st) -> bool:
    """Every (source box, receiver box) pair covered exactly once."""
    lmax = st.max_level
    gsrc = st.sorted_src.non_empty_index
    for j, rbox in enumerate(st.sorted_recv.non_empty_index):
        cover = np.zeros(gsrc.shape[0], dtype=np.int64)
        tb = st.neighbor_table
        seg = tb.neighbor_list[tb.neighbor_bookmark[j] : tb.neighbor_bookmark[j + 1]]
        cover[seg] += 1
        for level in range(2, lmax + 1):
            anc = np.uint64(int(rbox) >> (3 * (lmax - level)))
            row = int(np.searchsorted(st.directory.recv_boxes[level], anc))
            bm = st.stencils.bookmark[level]
            sboxes = st.directory.src_boxes[level][
                st.stencils.ranks[level][bm[row] : bm[row + 1]]
            ]
            d = np.uint64(3 * (lmax - level))
            lo = np.searchsorted(gsrc, sboxes << d)
            hi = np.searchsorted(gsrc, (sboxes + np.uint64(1)) << d)
            for a, b in zip(lo, hi):
                cover[a:b] += 1
        if not np.all(cover == 1):
            return False
    return True


def _run_verify(spec: RunSpec) -> tuple[list[list], list[str], bool]:
    src, q, recv = generate(spec)
    level = spec.resolve_level()
    st = build_all(src, q, recv, max_level=level)
    checks = [
        ("pseudo_sort_contract", _verify_sort_contract(st), ""),
        ("neighbor_table_vs_bruteforce", _verify_neighbor_lists(st), ""),
        ("near_far_coverage", _verify_coverage(st), ""),
    ]
    if spec.nodes > 1:
        phi_single = evaluate(st, spec.p)
        phi_dist, ledger, cluster = evaluate_distributed(
            src, q, recv, spec.p, spec.nodes, spec.units_per_node,
            max_level=level, audit=True,
        )
        diff = float(np.max(np.abs(phi_dist - phi_single)) / np.max(np.abs(phi_single)))
        audit = cluster.translation_audit()
        cov = cluster.coverage_audit()
        checks += [
            ("distributed_equivalence", diff <= 1e-10, f"max_rel_diff={diff:.3e}"),
            (
                "exactly_once_translation",
                audit["duplicate_expansions"] == 0
                and audit["missing_expansions"] == 0
                and audit["duplicate_root_children"] == 0,
                str(audit),
            ),
            ("distributed_coverage", cov == {"duplicates": 0, "misses": 0}, str(cov)),
            ("ledger_conservation", ledger.conservation_ok(), ""),
        ]
    rows = [[name, "pass" if ok else "FAIL", detail] for name, ok, detail in checks]
    return rows, ["check", "status", "detail"], all(ok for _, ok, _ in checks)


def _run_bench(spec: RunSpec) -> tuple[list[list], list[str], bool]:
    level = spec.resolve_level()
    sizes = [max(1, spec.n_sources // 4), max(1, spec.n_sources // 2), spec.n_sources]
    backends = ["python"]
    try:
        get_kernels("compiled")
        backends.insert(0, "compiled")
    except ImportError:
        pass
    rows = []
    for n in sizes:
        sub = RunSpec(**{**spec.__dict__, "n_sources": n, "n_receivers": n})
        src, q, recv = generate(sub)
        for name in backends:
            import fmmkit.backend as backend_mod

            saved = backend_mod.kernels
            backend_mod.kernels = get_kernels(name)
            try:
                for run in range(3):
                    t0 = time.perf_counter()
                    build_all(src, q, recv, max_level=level)
                    dt = time.perf_counter() - t0
                    rows.append([n, n, level, name, run, f"{dt:.6f}"])
            finally:
                backend_mod.kernels = saved
    return rows, ["n_sources", "n_receivers", "max_level", "backend", "run", "build_seconds"], True


def run(spec: RunSpec) -> int:
    runners = {
        "build": _run_build,
        "evaluate": _run_evaluate,
        "verify": _run_verify,
        "bench": _run_bench,
    }
    if spec.mode not in runners:
        raise FmmError(f"unknown mode {spec.mode!r}")
    rows, header, ok = runners[spec.mode](spec)
    out = open(spec.out, "w", newline="", encoding="utf-8") if spec.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if spec.out:
            out.close()
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="fmmkit", description="FMM data-structure benchmark and verification driver"
    )
    ap.add_argument("--n-sources", type=int, required=True)
    ap.add_argument("--n-receivers", type=int, required=True)
    ap.add_argument("--dist", choices=["uniform", "sphere"], default="uniform")
    group = ap.add_mutually_exclusive_group(required=True)
    group.add_argument("--cluster-size", type=int)
    group.add_argument("--lmax", type=int)
    ap.add_argument("--p", type=int, default=8)
    ap.add_argument("--nodes", type=int, default=1)
    ap.add_argument("--units-per-node", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--mode", choices=["build", "evaluate", "verify", "bench"], default="build")
    ap.add_argument("--out", type=str, default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = RunSpec(
        n_sources=args.n_sources,
        n_receivers=args.n_receivers,
        dist=args.dist,
        cluster_size=args.cluster_size,
        max_level=args.lmax,
        p=args.p,
        nodes=args.nodes,
        units_per_node=args.units_per_node,
        seed=args.seed,
        mode=args.mode,
        out=args.out,
    )
    try:
        return run(spec)
    except FmmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
