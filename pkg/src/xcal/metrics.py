"""Calibration and ranking metrics over (predictions, ground truth) pairs.

All estimators pool the (confidence, correctness) pairs of the top-k
positions across instances.  Pair order is fixed (instance stream order,
rank ascending within an instance) and per-bin accumulation follows that
order, so results are reproducible bit-for-bit across backends.

Bin rule: fixed-width bins over [0, 1] are left-open right-closed
(a_i, a_{i+1}] except the first, which is [0, a_2]; confidence exactly
1.0 falls in the last bin, exactly 0.0 in the first.

Correctness values are usually the sampled 0/1 outcomes, but every
estimator also accepts fractional values in [0, 1]; feeding the exact
conditional probabilities instead of outcomes evaluates the estimator in
expectation (no outcome-sampling noise).

Internal units are probabilities in [0, 1]; the report layer scales
calibration metrics by 100 to percent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from . import _kernels
from .core import (
    DenseScoreMatrix,
    PredictionBlock,
    TruthBlock,
    as_prediction_block,
    as_truth_block,
)


@dataclass
class ReliabilityBins:
    """Per-bin counts and mean confidence/accuracy; backs ECE, ACE, the
    Brier decomposition and reliability-diagram output.

    Empty bins carry mean_conf = mean_acc = 0 and contribute no weight.
    """

    edges: np.ndarray
    counts: np.ndarray
    mean_conf: np.ndarray
    mean_acc: np.ndarray

    @property
    def n_pairs(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_sums(cls, edges, counts, sum_conf, sum_y) -> "ReliabilityBins":
        counts = np.asarray(counts, dtype=np.int64)
        nz = counts > 0
        mean_conf = np.zeros(len(counts), np.float64)
        mean_acc = np.zeros(len(counts), np.float64)
        mean_conf[nz] = sum_conf[nz] / counts[nz]
        mean_acc[nz] = sum_y[nz] / counts[nz]
        return cls(np.asarray(edges, dtype=np.float64), counts, mean_conf, mean_acc)


@dataclass(frozen=True)
class BrierDecomposition:
    reliability: float
    resolution: float
    uncertainty: float


def canonical_edges(bins: int) -> np.ndarray:
    if bins < 1:
        raise ValueError("bins must be >= 1")
    return np.arange(bins + 1, dtype=np.float64) / bins


class PairSet(NamedTuple):
    """Pooled top-k pairs: confidence, correctness, and their provenance."""

    conf: np.ndarray
    y: np.ndarray
    ids: np.ndarray
    ranks: np.ndarray
    rows: np.ndarray
    labels: np.ndarray


def topk_pairs(preds, truth, k: int) -> PairSet:
    """Pool the top-min(k, row length) entries of every instance.

    Pair order is instance stream order with ranks ascending inside an
    instance.  ``truth=None`` yields all-zero correctness.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    p = as_prediction_block(preds)
    lengths = p.lengths()
    take = np.minimum(lengths, k)
    total = int(take.sum())
    rows = np.repeat(np.arange(p.n_rows, dtype=np.int64), take)
    if p.n_rows:
        starts = np.concatenate(([0], np.cumsum(take)[:-1])).astype(np.int64)
    else:
        starts = np.zeros(0, np.int64)
    ranks = np.arange(total, dtype=np.int64) - np.repeat(starts, take)
    idx = np.repeat(p.row_ptr[:-1], take) + ranks
    conf = p.probs[idx]
    labels = np.ascontiguousarray(p.labels[idx])
    if truth is None:
        y = np.zeros(total, np.float64)
    else:
        t = as_truth_block(truth)
        if t.n_rows != p.n_rows:
            raise ValueError(
                f"aligned inputs required: {t.n_rows} truth rows vs {p.n_rows} prediction rows"
            )
        y = _kernels.pair_flags(labels, rows, t.labels, t.row_ptr)
    return PairSet(conf, y, p.ids[rows], ranks, rows, labels)


def binned_error(counts, sum_conf, sum_y, n_total: int) -> float:
    """sum over bins of count * |mean_acc - mean_conf|, divided once by n."""
    terms = []
    for c, sc, sy in zip(counts.tolist(), sum_conf.tolist(), sum_y.tolist()):
        if c > 0:
            terms.append(c * abs(sy / c - sc / c))
    return math.fsum(terms) / n_total


def binned_stats(conf, y, bins: int = 10) -> ReliabilityBins:
    edges = canonical_edges(bins)
    counts, sum_conf, sum_y = _kernels.bin_stats(
        np.ascontiguousarray(conf, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        edges,
    )
    return ReliabilityBins.from_sums(edges, counts, sum_conf, sum_y)


def ece_at_k(preds, truth, k: int, bins: int = 10) -> tuple[float, ReliabilityBins]:
    """Binned expected calibration error over pooled top-k pairs."""
    pairs = topk_pairs(preds, truth, k)
    if len(pairs.conf) == 0:
        raise ValueError("no data")
    edges = canonical_edges(bins)
    counts, sum_conf, sum_y = _kernels.bin_stats(pairs.conf, pairs.y, edges)
    rel = ReliabilityBins.from_sums(edges, counts, sum_conf, sum_y)
    return binned_error(counts, sum_conf, sum_y, len(pairs.conf)), rel


def quantile_binned_stats(conf, y, ids, ranks, bins: int):
    """Equal-mass binning; assignment follows sorted order with stable
    tie-break by (instance_id, rank).  Remainder pairs go one-per-bin from
    the lowest bin upward."""
    n = len(conf)
    order = np.lexsort((ranks, ids, conf))
    conf_s = conf[order]
    y_s = y[order]
    q, r = divmod(n, bins)
    sizes = np.full(bins, q, dtype=np.int64)
    sizes[:r] += 1
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(np.int64)
    counts = sizes
    # bincount accumulates sequentially in input order, keeping per-bin
    # sums identical to a plain left-to-right pass over the sorted pairs
    bin_of_pair = np.repeat(np.arange(bins, dtype=np.int64), sizes)
    sum_conf = np.bincount(bin_of_pair, weights=conf_s, minlength=bins)
    sum_y = np.bincount(bin_of_pair, weights=y_s, minlength=bins)
    edges = np.empty(bins + 1, np.float64)
    edges[0] = 0.0
    edges[bins] = 1.0
    for j in range(1, bins):
        pos = int(starts[j])
        if pos <= 0:
            edges[j] = 0.0
        elif pos >= n:
            edges[j] = 1.0
        else:
            edges[j] = 0.5 * (conf_s[pos - 1] + conf_s[pos])
    return ReliabilityBins.from_sums(edges, counts, sum_conf, sum_y), counts, sum_conf, sum_y


def ace_at_k(preds, truth, k: int, bins: int = 10) -> tuple[float, ReliabilityBins]:
    """Adaptive (equal-mass binning) calibration error over top-k pairs."""
    pairs = topk_pairs(preds, truth, k)
    if len(pairs.conf) == 0:
        raise ValueError("no data")
    rel, counts, sum_conf, sum_y = quantile_binned_stats(
        pairs.conf, pairs.y, pairs.ids, pairs.ranks, bins
    )
    return binned_error(counts, sum_conf, sum_y, len(pairs.conf)), rel


def _dense_outcomes(truth, n: int, m: int) -> np.ndarray:
    if isinstance(truth, np.ndarray):
        if truth.shape != (n, m):
            raise ValueError(
                f"outcome matrix shape {truth.shape} does not match scores ({n}, {m})"
            )
        return truth.astype(np.float64, copy=False)
    if isinstance(truth, TruthBlock):
        rows = truth
    else:
        rows = TruthBlock.from_rows(truth)
    if rows.n_rows != n:
        raise ValueError("aligned inputs required")
    out = np.zeros((n, m), np.float64)
    row_idx = np.repeat(np.arange(n, dtype=np.int64), rows.counts())
    out[row_idx, rows.labels] = 1.0
    return out


def marginal_ece(scores, truth, bins: int = 10) -> float:
    """Binned calibration error pooled over every (instance, label) pair.

    This treats each label as an independent binary task and runs the
    binned estimator on all n*m pairs at once.  In long-tailed spaces the
    vast majority of pairs are easy negatives (near-zero confidence,
    negative outcome), so this number is typically tiny even when the
    top-ranked predictions are badly calibrated; that contrast is the
    reason the top-k variant exists.  Desk-scale m only.

    ``truth`` may be rows, a TruthBlock, or a dense outcome matrix;
    fractional outcome values evaluate the estimator in expectation.
    """
    if isinstance(scores, DenseScoreMatrix):
        scores = scores.scores
    probs = np.asarray(scores, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("not a probability matrix")
    if probs.size and (probs.min() < 0.0 or probs.max() > 1.0 or not np.all(np.isfinite(probs))):
        raise ValueError("not a probability matrix")
    n, m = probs.shape
    if n == 0 or m == 0:
        raise ValueError("no data")
    outcomes = _dense_outcomes(truth, n, m)
    conf = np.ascontiguousarray(probs.ravel())
    y = np.ascontiguousarray(outcomes.ravel())
    counts, sum_conf, sum_y = _kernels.bin_stats(conf, y, canonical_edges(bins))
    return binned_error(counts, sum_conf, sum_y, len(conf))


def brier(preds, truth, k: int) -> float:
    """Mean squared deviation between confidence and correctness over top-k pairs."""
    pairs = topk_pairs(preds, truth, k)
    if len(pairs.conf) == 0:
        raise ValueError("no data")
    return float(np.mean((pairs.conf - pairs.y) ** 2))


def brier_decomposition(bins: ReliabilityBins, base_rate: float) -> BrierDecomposition:
    """Reliability / resolution / uncertainty split of the Brier score.

    REL - RES + UNC equals the Brier score of forecasts quantized to their
    bin mean confidence, exactly, for binary outcomes.
    """
    n = bins.n_pairs
    if n == 0:
        raise ValueError("empty bins set")
    rel_terms = []
    res_terms = []
    for c, mc, ma in zip(bins.counts.tolist(), bins.mean_conf.tolist(), bins.mean_acc.tolist()):
        if c > 0:
            rel_terms.append(c * (mc - ma) ** 2)
            res_terms.append(c * (ma - base_rate) ** 2)
    return BrierDecomposition(
        reliability=math.fsum(rel_terms) / n,
        resolution=math.fsum(res_terms) / n,
        uncertainty=base_rate * (1.0 - base_rate),
    )


def nll(preds, truth, k: int, eps: float = 1e-12) -> float:
    """Mean negative log-likelihood over top-k pairs; probabilities are
    clamped to [eps, 1-eps] since isotonic output can be exactly 0 or 1."""
    pairs = topk_pairs(preds, truth, k)
    if len(pairs.conf) == 0:
        raise ValueError("no data")
    conf, y = pairs.conf, pairs.y
    ll = y * np.log(np.maximum(conf, eps)) + (1.0 - y) * np.log(np.maximum(1.0 - conf, eps))
    return float(-np.mean(ll))


def _rank_arrays(preds, truth, k: int):
    p = as_prediction_block(preds)
    t = as_truth_block(truth)
    if t.n_rows != p.n_rows:
        raise ValueError(
            f"aligned inputs required: {t.n_rows} truth rows vs {p.n_rows} prediction rows"
        )
    if p.n_rows == 0:
        raise ValueError("no data")
    rows = np.repeat(np.arange(p.n_rows, dtype=np.int64), p.lengths())
    flags = _kernels.pair_flags(p.labels, rows, t.labels, t.row_ptr)
    w = 1.0 / np.log2(np.arange(k, dtype=np.float64) + 2.0)
    prec, ndcg_rows = _kernels.rank_stats(
        flags, p.row_ptr, t.counts().astype(np.int64), k, w, np.cumsum(w)
    )
    return prec, ndcg_rows


def precision_at_k(preds, truth, k: int) -> float:
    """Mean fraction of the k selected labels that are relevant."""
    prec, _ = _rank_arrays(preds, truth, k)
    return float(np.mean(prec))


def ndcg_at_k(preds, truth, k: int) -> float:
    """Mean DCG@k / IDCG@k with 1/log2(rank+1) gains; empty relevant sets
    contribute 0."""
    _, ndcg_rows = _rank_arrays(preds, truth, k)
    return float(np.mean(ndcg_rows))


def confidence_histogram(preds, k: int, bins: int = 10) -> np.ndarray:
    """Counts of top-k confidences per fixed-width bin (no truth needed)."""
    pairs = topk_pairs(preds, None, k)
    edges = canonical_edges(bins)
    counts, _, _ = _kernels.bin_stats(pairs.conf, pairs.y, edges)
    return counts


def ece_per_rank(preds, truth, k: int, bins: int = 10) -> dict[int, float]:
    """Diagnostic: ECE restricted to pairs at each rank position 1..k."""
    pairs = topk_pairs(preds, truth, k)
    conf, y, ranks = pairs.conf, pairs.y, pairs.ranks
    out = {}
    edges = canonical_edges(bins)
    for r in range(k):
        mask = ranks == r
        if not mask.any():
            continue
        counts, sc, sy = _kernels.bin_stats(
            np.ascontiguousarray(conf[mask]), np.ascontiguousarray(y[mask]), edges
        )
        out[r + 1] = binned_error(counts, sc, sy, int(mask.sum()))
    return out


# ---------------------------------------------------------------------------
# streaming accumulators


class StreamingEvaluator:
    """Single-pass, mergeable metric accumulators with O(bins) memory.

    Computes ECE@k, Brier, NLL, P@k, nDCG@k, reliability bins and the
    confidence histogram for every requested k.  ACE needs a global sort
    over all pooled pairs and is therefore only available on the
    in-memory path.
    """

    def __init__(self, ks: Iterable[int], bins: int = 10, eps: float = 1e-12):
        self.ks = sorted(set(int(k) for k in ks))
        if not self.ks or self.ks[0] < 1:
            raise ValueError("ks must be positive")
        self.bins = bins
        self.eps = eps
        self.edges = canonical_edges(bins)
        self.n_rows = 0
        self._acc = {
            k: {
                "counts": np.zeros(bins, np.int64),
                "sum_conf": np.zeros(bins, np.float64),
                "sum_y": np.zeros(bins, np.float64),
                "brier_sum": 0.0,
                "nll_sum": 0.0,
                "pairs": 0,
                "prec_sum": 0.0,
                "ndcg_sum": 0.0,
            }
            for k in self.ks
        }
        self._w = {k: 1.0 / np.log2(np.arange(k, dtype=np.float64) + 2.0) for k in self.ks}

    def update(self, preds: PredictionBlock, truth: TruthBlock) -> None:
        if truth.n_rows != preds.n_rows:
            raise ValueError(
                f"aligned inputs required: {truth.n_rows} truth rows vs {preds.n_rows} prediction rows"
            )
        self.n_rows += preds.n_rows
        kmax = self.ks[-1]
        pairs = topk_pairs(preds, truth, kmax)
        conf, y, ranks = pairs.conf, pairs.y, pairs.ranks
        rows_full = np.repeat(np.arange(preds.n_rows, dtype=np.int64), preds.lengths())
        flags_full = _kernels.pair_flags(preds.labels, rows_full, truth.labels, truth.row_ptr)
        tcounts = truth.counts().astype(np.int64)
        for k in self.ks:
            acc = self._acc[k]
            if k == kmax:
                conf_k, y_k = conf, y
            else:
                mask = ranks < k
                conf_k = np.ascontiguousarray(conf[mask])
                y_k = np.ascontiguousarray(y[mask])
            counts, sc, sy = _kernels.bin_stats(conf_k, y_k, self.edges)
            acc["counts"] += counts
            acc["sum_conf"] += sc
            acc["sum_y"] += sy
            acc["brier_sum"] += float(np.sum((conf_k - y_k) ** 2))
            ll = y_k * np.log(np.maximum(conf_k, self.eps)) + (1.0 - y_k) * np.log(
                np.maximum(1.0 - conf_k, self.eps)
            )
            acc["nll_sum"] += float(-np.sum(ll))
            acc["pairs"] += len(conf_k)
            w = self._w[k]
            prec, ndcg_rows = _kernels.rank_stats(
                flags_full, preds.row_ptr, tcounts, k, w, np.cumsum(w)
            )
            acc["prec_sum"] += float(np.sum(prec))
            acc["ndcg_sum"] += float(np.sum(ndcg_rows))

    def merge(self, other: "StreamingEvaluator") -> None:
        if other.ks != self.ks or other.bins != self.bins:
            raise ValueError("incompatible accumulators")
        self.n_rows += other.n_rows
        for k in self.ks:
            a, b = self._acc[k], other._acc[k]
            for key in a:
                a[key] = a[key] + b[key]

    def result(self) -> dict[int, dict]:
        out = {}
        for k in self.ks:
            acc = self._acc[k]
            n = acc["pairs"]
            if n == 0:
                raise ValueError("no data")
            rel = ReliabilityBins.from_sums(
                self.edges, acc["counts"], acc["sum_conf"], acc["sum_y"]
            )
            out[k] = {
                "ece": binned_error(acc["counts"], acc["sum_conf"], acc["sum_y"], n),
                "ace": None,
                "brier": acc["brier_sum"] / n,
                "nll": acc["nll_sum"] / n,
                "p_at_k": acc["prec_sum"] / self.n_rows,
                "ndcg_at_k": acc["ndcg_sum"] / self.n_rows,
                "reliability": rel,
                "histogram": acc["counts"].copy(),
                "pairs": n,
            }
        return out
