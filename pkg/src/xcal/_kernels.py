"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is picked once at import time from the ``XCAL_BACKEND``
environment variable:

* ``auto`` (default) -- use numba when it imports, numpy otherwise
* ``numba``          -- require numba, raise if unavailable
* ``numpy``          -- force the pure-numpy/python fallback

Bin accumulation, PAV and correctness flags are bit-identical across the
two paths (accumulation order is fixed to input order).  The ranking
kernel's hit counts are exact too; its nDCG sums agree only to rounding
because the numpy path adds the irrational gain weights pairwise.
``benchmarks/bench_kernels.py`` compares the two paths.
"""

from __future__ import annotations

import os

import numpy as np

_FALLBACK_VALUES = ("numpy", "python", "0", "off", "false")


def _requested_backend() -> str:
    value = os.environ.get("XCAL_BACKEND", "auto").strip().lower()
    if value in ("", "auto"):
        return "auto"
    if value in _FALLBACK_VALUES:
        return "numpy"
    if value in ("numba", "jit", "1", "on"):
        return "numba"
    raise ValueError(f"unknown XCAL_BACKEND value: {value!r}")


_requested = _requested_backend()
if _requested == "numpy":
    numba = None
else:
    try:
        import numba
    except ImportError:
        if _requested == "numba":
            raise
        numba = None

BACKEND = "numba" if numba is not None else "numpy"


# ---------------------------------------------------------------------------
# fixed-width bin accumulation
#
# Bin rule: bins are (edges[i], edges[i+1]] except the first, which is
# [edges[0], edges[1]].  Assignment compares against the edge values
# directly (no arithmetic shortcuts) so any two implementations agree
# bit-for-bit.

def _bin_stats_numpy(conf, y, edges):
    nbins = len(edges) - 1
    idx = np.searchsorted(edges, conf, side="left") - 1
    np.clip(idx, 0, nbins - 1, out=idx)
    counts = np.bincount(idx, minlength=nbins)
    sum_conf = np.bincount(idx, weights=conf, minlength=nbins)
    sum_y = np.bincount(idx, weights=y, minlength=nbins)
    return counts.astype(np.int64), sum_conf, sum_y


def _bin_stats_loop(conf, y, edges):
    nbins = len(edges) - 1
    counts = np.zeros(nbins, np.int64)
    sum_conf = np.zeros(nbins, np.float64)
    sum_y = np.zeros(nbins, np.float64)
    for i in range(conf.shape[0]):
        c = conf[i]
        lo = 0
        hi = nbins - 1
        # smallest b with edges[b + 1] >= c, i.e. searchsorted(left) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if edges[mid + 1] >= c:
                hi = mid
            else:
                lo = mid + 1
        counts[lo] += 1
        sum_conf[lo] += c
        sum_y[lo] += y[i]
    return counts, sum_conf, sum_y


# ---------------------------------------------------------------------------
# pool-adjacent-violators
#
# Inputs are per-block means/weights ordered by ascending score (tied
# scores already merged by the caller).  Only strict violations are
# pooled, so already-monotone inputs come back unchanged.

def _pav_loop(values, weights):
    n = values.shape[0]
    block_v = np.empty(n, np.float64)
    block_w = np.empty(n, np.float64)
    block_start = np.empty(n, np.int64)
    nblocks = 0
    for i in range(n):
        block_start[nblocks] = i
        block_v[nblocks] = values[i]
        block_w[nblocks] = weights[i]
        nblocks += 1
        while nblocks > 1 and block_v[nblocks - 2] > block_v[nblocks - 1]:
            w = block_w[nblocks - 2] + block_w[nblocks - 1]
            block_v[nblocks - 2] = (
                block_w[nblocks - 2] * block_v[nblocks - 2]
                + block_w[nblocks - 1] * block_v[nblocks - 1]
            ) / w
            block_w[nblocks - 2] = w
            nblocks -= 1
    fitted = np.empty(n, np.float64)
    for b in range(nblocks):
        end = block_start[b + 1] if b + 1 < nblocks else n
        for i in range(block_start[b], end):
            fitted[i] = block_v[b]
    return fitted


# ---------------------------------------------------------------------------
# per-pair correctness flags
#
# truth_labels holds each row's relevant labels, sorted ascending,
# delimited by truth_ptr.

def _pair_flags_loop(pred_labels, pred_rows, truth_labels, truth_ptr):
    flags = np.zeros(pred_labels.shape[0], np.float64)
    for i in range(pred_labels.shape[0]):
        row = pred_rows[i]
        lab = pred_labels[i]
        lo = truth_ptr[row]
        hi = truth_ptr[row + 1]
        while lo < hi:
            mid = (lo + hi) // 2
            if truth_labels[mid] < lab:
                lo = mid + 1
            else:
                hi = mid
        if lo < truth_ptr[row + 1] and truth_labels[lo] == lab:
            flags[i] = 1.0
    return flags


def _pair_flags_numpy(pred_labels, pred_rows, truth_labels, truth_ptr):
    if len(pred_labels) == 0:
        return np.zeros(0, np.float64)
    truth_rows = np.repeat(
        np.arange(len(truth_ptr) - 1, dtype=np.int64), np.diff(truth_ptr)
    )
    span = np.int64(max(pred_labels.max(initial=0), truth_labels.max(initial=0)) + 1)
    pred_keys = pred_rows * span + pred_labels
    truth_keys = truth_rows * span + truth_labels
    return np.isin(pred_keys, truth_keys).astype(np.float64)


# ---------------------------------------------------------------------------
# per-instance ranking stats
#
# For every row: hit count and DCG over the first min(k, len) entries.
# dcg_w[r] is the gain of 0-based rank r, cum_w its inclusive prefix sum.

def _rank_stats_loop(flags, row_ptr, truth_counts, k, dcg_w, cum_w):
    nrows = len(row_ptr) - 1
    prec = np.zeros(nrows, np.float64)
    ndcg = np.zeros(nrows, np.float64)
    for row in range(nrows):
        start = row_ptr[row]
        take = row_ptr[row + 1] - start
        if take > k:
            take = k
        hits = 0.0
        dcg = 0.0
        for r in range(take):
            f = flags[start + r]
            hits += f
            dcg += f * dcg_w[r]
        prec[row] = hits / k
        tc = truth_counts[row]
        if tc > 0:
            ideal = k if tc > k else tc
            ndcg[row] = dcg / cum_w[ideal - 1]
    return prec, ndcg


def _rank_stats_numpy(flags, row_ptr, truth_counts, k, dcg_w, cum_w):
    nrows = len(row_ptr) - 1
    lengths = np.diff(row_ptr)
    rank = np.arange(len(flags), dtype=np.int64) - np.repeat(row_ptr[:-1], lengths)
    kept = rank < k
    w_flat = dcg_w[np.minimum(rank, len(dcg_w) - 1)]
    hit_term = np.where(kept, flags, 0.0)
    dcg_term = np.where(kept, flags * w_flat, 0.0)
    prec = np.zeros(nrows, np.float64)
    dcg = np.zeros(nrows, np.float64)
    nonempty = lengths > 0
    if np.any(nonempty):
        starts = row_ptr[:-1][nonempty]
        prec[nonempty] = np.add.reduceat(hit_term, starts) / k
        dcg[nonempty] = np.add.reduceat(dcg_term, starts)
    has_truth = truth_counts > 0
    ideal = np.minimum(truth_counts, k)
    idcg = np.ones(nrows, np.float64)
    idcg[has_truth] = cum_w[ideal[has_truth] - 1]
    return prec, np.where(has_truth, dcg / idcg, 0.0)


if BACKEND == "numba":
    _njit = numba.njit(cache=True)
    bin_stats = _njit(_bin_stats_loop)
    pav = _njit(_pav_loop)
    pair_flags = _njit(_pair_flags_loop)
    rank_stats = _njit(_rank_stats_loop)
else:
    bin_stats = _bin_stats_numpy
    pav = _pav_loop
    pair_flags = _pair_flags_numpy
    rank_stats = _rank_stats_numpy


def warmup() -> None:
    """Force JIT compilation of every kernel (no-op on the numpy backend)."""
    conf = np.array([0.25, 0.75])
    y = np.array([0.0, 1.0])
    bin_stats(conf, y, np.arange(11) / 10.0)
    pav(y.copy(), np.ones(2))
    ptr = np.array([0, 1, 2], np.int64)
    pair_flags(np.array([3, 4], np.int64), np.array([0, 1], np.int64),
               np.array([3, 5], np.int64), ptr)
    w = 1.0 / np.log2(np.arange(2) + 2.0)
    rank_stats(y, ptr, np.array([1, 1], np.int64), 1, w, np.cumsum(w))
