"""Side-by-side build benchmark: compiled kernels vs the pure-numpy fallback.

Usage: python benchmarks/backend_compare.py [max_exponent] [max_level]
Prints one row per (size, backend) with the median of three builds.
"""

import sys
import time

import numpy as np

import fmmkit.backend as backend_mod
from fmmkit.backend import get_kernels
from fmmkit.cli import RunSpec, generate
from fmmkit.lists import build_all


def main() -> int:
    max_exp = int(sys.argv[1]) if len(sys.argv) > 1 else 18
    level = int(sys.argv[2]) if len(sys.argv) > 2 else 5
    backends = ["python"]
    try:
        get_kernels("compiled")
        backends.insert(0, "compiled")
    except ImportError:
        print("compiled kernels unavailable; benchmarking the fallback only")

    print(f"{'n':>9} {'backend':>9} {'median_s':>10} {'speedup':>8}")
    for exp in range(max_exp - 2, max_exp + 1):
        n = 2**exp
        src, q, recv = generate(RunSpec(n_sources=n, n_receivers=n, seed=exp))
        medians = {}
        for name in backends:
            saved = backend_mod.kernels
            backend_mod.kernels = get_kernels(name)
            try:
                runs = []
                for _ in range(3):
                    t0 = time.perf_counter()
                    build_all(src, q, recv, max_level=level)
                    runs.append(time.perf_counter() - t0)
            finally:
                backend_mod.kernels = saved
            medians[name] = float(np.median(runs))
        base = medians.get("python", next(iter(medians.values())))
        for name in backends:
            print(
                f"{n:>9} {name:>9} {medians[name]:>10.4f} "
                f"{base / medians[name]:>8.2f}"
            )
    return 0


if __name__ == "__main__":
    sys.exit(main())
