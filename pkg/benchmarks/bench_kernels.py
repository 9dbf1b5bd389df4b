"""Benchmark the jitted kernels against the pure-numpy fallback paths.

Run:  python benchmarks/bench_kernels.py [n_pairs]

Set XCAL_BACKEND=numpy to check what the package would do without numba;
this script always times both implementations directly.
"""

import sys
import time

import numpy as np

from xcal import _kernels
from xcal._kernels import (
    _bin_stats_loop,
    _bin_stats_numpy,
    _pair_flags_loop,
    _pair_flags_numpy,
    _pav_loop,
    _rank_stats_loop,
    _rank_stats_numpy,
)


def timeit(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 5_000_000
    rng = np.random.default_rng(0)
    print(f"backend selected by env: {_kernels.BACKEND};  n = {n:,} pairs\n")

    jitted = {}
    if _kernels.BACKEND == "numba":
        import numba

        compile_t0 = time.perf_counter()
        jitted = {
            "bin_stats": numba.njit(cache=True)(_bin_stats_loop),
            "pav": numba.njit(cache=True)(_pav_loop),
            "pair_flags": numba.njit(cache=True)(_pair_flags_loop),
            "rank_stats": numba.njit(cache=True)(_rank_stats_loop),
        }
        _kernels.warmup()
        print(f"(jit compile/caching: {time.perf_counter() - compile_t0:.2f}s)\n")

    rows = n // 5
    conf = rng.random(n)
    y = (rng.random(n) < conf).astype(np.float64)
    edges = np.arange(11) / 10.0

    lengths = np.full(rows, 5, dtype=np.int64)
    row_ptr = np.concatenate(([0], np.cumsum(lengths))).astype(np.int64)
    labels = rng.integers(0, 1000, n).astype(np.int64)
    row_of_pair = np.repeat(np.arange(rows, dtype=np.int64), 5)
    t_counts = rng.integers(1, 6, rows).astype(np.int64)
    t_labels = np.sort(
        rng.integers(0, 1000, int(t_counts.sum())).astype(np.int64).reshape(-1)
    )
    # per-row sorted slices
    t_ptr = np.concatenate(([0], np.cumsum(t_counts))).astype(np.int64)
    for lo, hi in zip(t_ptr[:-1], t_ptr[1:]):
        t_labels[lo:hi] = np.sort(t_labels[lo:hi])
    w = 1.0 / np.log2(np.arange(5, dtype=np.float64) + 2.0)
    cw = np.cumsum(w)
    flags = _pair_flags_numpy(labels, row_of_pair, t_labels, t_ptr)

    pav_vals = rng.random(n // 2)
    pav_w = np.ones(n // 2)

    cases = [
        ("bin_stats", _bin_stats_numpy, (conf, y, edges)),
        ("pav", _pav_loop, (pav_vals, pav_w)),
        ("pair_flags", _pair_flags_numpy, (labels, row_of_pair, t_labels, t_ptr)),
        ("rank_stats", _rank_stats_numpy, (flags, row_ptr, t_counts, 5, w, cw)),
    ]
    print(f"{'kernel':<12} {'numpy':>10} {'numba':>10} {'speedup':>9}")
    for name, numpy_fn, args in cases:
        if name == "pav":
            # the fallback for PAV is the un-jitted loop; measure a slice
            # and extrapolate linearly instead of waiting minutes
            sample = 200_000
            t_numpy = timeit(
                numpy_fn, pav_vals[:sample], pav_w[:sample], repeats=2
            ) * (len(pav_vals) / sample)
        else:
            t_numpy = timeit(numpy_fn, *args)
        if jitted:
            jit_fn = jitted[name]
            jit_fn(*args)  # compile outside timing
            t_jit = timeit(jit_fn, *args)
            print(f"{name:<12} {t_numpy * 1e3:>8.1f}ms {t_jit * 1e3:>8.1f}ms {t_numpy / t_jit:>8.1f}x")
        else:
            print(f"{name:<12} {t_numpy * 1e3:>8.1f}ms {'-':>10} {'-':>9}")


if __name__ == "__main__":
    main()
