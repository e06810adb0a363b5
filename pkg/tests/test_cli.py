"""Driver: generation, modes, CSV schemas, exit codes."""

import csv
import io
import sys

import numpy as np
import pytest

from fmmkit.cli import RunSpec, build_parser, generate, main, run


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_generate_deterministic():
    spec = RunSpec(n_sources=100, n_receivers=50, seed=7)
    a = generate(spec)
    b = generate(spec)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
    c = generate(RunSpec(n_sources=100, n_receivers=50, seed=8))
    assert not np.array_equal(a[0], c[0])


def test_generate_sphere_radius_exact():
    spec = RunSpec(n_sources=500, n_receivers=500, dist="sphere", seed=1)
    src, _, recv = generate(spec)
    for pts in (src, recv):
        r = np.linalg.norm(pts - 0.5, axis=1)
        assert np.max(np.abs(r - 0.45)) < 1e-12
        assert pts.min() >= 0.0 and pts.max() <= 1.0


def test_generate_uniform_octant_balance():
    n = 100_000
    src, _, _ = generate(RunSpec(n_sources=n, n_receivers=1, seed=3))
    octant = (
        (src[:, 0] >= 0.5).astype(int)
        + 2 * (src[:, 1] >= 0.5).astype(int)
        + 4 * (src[:, 2] >= 0.5).astype(int)
    )
    counts = np.bincount(octant, minlength=8)
    expect = n / 8
    sigma = np.sqrt(n * (1 / 8) * (7 / 8))
    assert np.all(np.abs(counts - expect) < 5 * sigma)


def test_build_mode_csv(tmp_path):
    out = tmp_path / "build.csv"
    rc = run(
        RunSpec(n_sources=500, n_receivers=500, max_level=3, mode="build", out=str(out))
    )
    assert rc == 0
    rows = read_csv(out)
    assert rows[0] == ["name", "value"]
    names = {r[0] for r in rows[1:]}
    assert {"total_seconds", "src_non_empty_boxes", "backend"} <= names


def test_evaluate_mode_csv(tmp_path):
    out = tmp_path / "eval.csv"
    rc = run(
        RunSpec(
            n_sources=600, n_receivers=600, max_level=3, p=8, mode="evaluate", out=str(out)
        )
    )
    assert rc == 0
    rows = dict(r for r in read_csv(out)[1:])
    assert float(rows["rel_rms_error_vs_direct"]) < 1e-3


def test_evaluate_mode_distributed(tmp_path):
    out = tmp_path / "eval.csv"
    rc = run(
        RunSpec(
            n_sources=600,
            n_receivers=600,
            max_level=3,
            p=6,
            nodes=2,
            mode="evaluate",
            out=str(out),
        )
    )
    assert rc == 0
    rows = dict(r for r in read_csv(out)[1:])
    assert float(rows["max_rel_diff_vs_single_node"]) <= 1e-10


def test_verify_mode_passes(tmp_path):
    out = tmp_path / "verify.csv"
    rc = run(
        RunSpec(
            n_sources=1500,
            n_receivers=1500,
            max_level=3,
            p=6,
            nodes=2,
            mode="verify",
            out=str(out),
        )
    )
    assert rc == 0
    rows = read_csv(out)
    assert rows[0] == ["check", "status", "detail"]
    assert all(r[1] == "pass" for r in rows[1:])
    assert len(rows) > 4


def test_bench_mode_csv(tmp_path):
    out = tmp_path / "bench.csv"
    rc = run(
        RunSpec(n_sources=2000, n_receivers=2000, max_level=3, mode="bench", out=str(out))
    )
    assert rc == 0
    rows = read_csv(out)
    assert rows[0] == ["n_sources", "n_receivers", "max_level", "backend", "run", "build_seconds"]
    backends = {r[3] for r in rows[1:]}
    assert "python" in backends


def test_cli_flags_and_exit_codes(tmp_path, capsys):
    out = tmp_path / "x.csv"
    rc = main(
        [
            "--n-sources", "300", "--n-receivers", "300", "--lmax", "2",
            "--seed", "5", "--mode", "verify", "--out", str(out),
        ]
    )
    assert rc == 0
    # cluster-size path
    rc = main(
        [
            "--n-sources", "300", "--n-receivers", "300", "--cluster-size", "32",
            "--mode", "build", "--out", str(out),
        ]
    )
    assert rc == 0


def test_cli_rejects_missing_sizing():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--n-sources", "10", "--n-receivers", "10"])
    with pytest.raises(SystemExit):
        build_parser().parse_args(
            ["--n-sources", "10", "--n-receivers", "10", "--lmax", "2", "--cluster-size", "4"]
        )


def test_cli_infeasible_spec_exit_code(capsys):
    # more units than non-empty receiver boxes
    rc = main(
        [
            "--n-sources", "4", "--n-receivers", "2", "--lmax", "3",
            "--nodes", "64", "--mode", "evaluate",
        ]
    )
    assert rc == 2
    assert "error:" in capsys.readouterr().err
