"""Compare the numba and pure-numpy kernel backends on representative shapes.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import importlib
import time

import numpy as np

from pacsim.kernels import _numpy

_numba = importlib.import_module("pacsim.kernels._numba")


def _best(fn, args, repeat):
    fn(*args)  # warm up / compile
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rng):
    codes = rng.integers(0, 256, size=(4096, 576), dtype=np.uint8)
    x = rng.integers(0, 2, size=(4096, 1024), dtype=np.uint8)
    w = rng.integers(0, 2, size=(4096, 1024), dtype=np.uint8)
    xp = rng.integers(0, 2, size=(256, 4, 576), dtype=np.uint8)
    wp = rng.integers(0, 2, size=(64, 4, 576), dtype=np.uint8)
    bx = rng.integers(0, 2, size=(2048, 8, 512), dtype=np.uint8)
    bw = rng.integers(0, 2, size=(2048, 8, 512), dtype=np.uint8)
    return [
        ("bit_counts 4096x576", "bit_counts", (codes, 8)),
        ("and_popcount 4096x1024", "and_popcount", (x, w)),
        ("cross_plane_counts 256x64x4x4x576", "cross_plane_counts", (xp, wp)),
        ("paired_plane_counts 2048x8x8x512", "paired_plane_counts", (bx, bw)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<36}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  equal")
    for label, name, inputs in cases(rng):
        ref = getattr(_numpy, name)(*inputs)
        got = getattr(_numba, name)(*inputs)
        t_np = _best(getattr(_numpy, name), inputs, args.repeat)
        t_nb = _best(getattr(_numba, name), inputs, args.repeat)
        print(f"{label:<36}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>9.2f}  {np.array_equal(ref, got)}")


if __name__ == "__main__":
    main()
