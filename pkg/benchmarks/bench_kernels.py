"""Time the compiled kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel and problem size with the best-of-N wall time of
each backend and the speedup. Exits with an error if the extension is not
built.
"""

import argparse
import sys
import timeit

import numpy as np

from semsurprise import _pykernels

try:
    from semsurprise import _ckernels
except ImportError:
    sys.exit("compiled extension not built; run `pip install -e . --no-build-isolation` first")


def cases(rng):
    for B, K in ((64, 3), (256, 8), (1024, 16)):
        sim = rng.uniform(-1, 1, (B, K))
        yield "sinkhorn_log", f"B={B} K={K}", (sim, 0.05, 100, 1e-6)
    for N, D in ((500, 16), (2000, 16), (4000, 64)):
        X = rng.standard_normal((N, D))
        g = rng.integers(0, 12, N).astype(np.int64)
        yield "group_distance_sums", f"N={N} D={D}", (X, g, 12)
    for M, R, D in ((400, 36, 16), (4000, 36, 16), (4000, 512, 64)):
        Q = rng.standard_normal((M, D))
        reps = rng.standard_normal((R, D))
        cls = rng.integers(0, 12, R).astype(np.int64)
        yield "nearest_two", f"M={M} R={R} D={D}", (Q, reps, cls)


def best_time(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<22}{'size':<20}{'cython (ms)':>12}{'python (ms)':>13}{'speedup':>9}")
    for name, size, call_args in cases(rng):
        tc = best_time(getattr(_ckernels, name), call_args, args.repeat)
        tp = best_time(getattr(_pykernels, name), call_args, args.repeat)
        print(f"{name:<22}{size:<20}{tc * 1e3:>12.3f}{tp * 1e3:>13.3f}{tp / tc:>8.1f}x")


if __name__ == "__main__":
    main()
