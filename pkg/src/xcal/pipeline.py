"""End-to-end recalibration protocols and metric reporting.

The main entry point is k-fold cross-validated recalibration of a test
prediction dump: for each fold, a calibrator is fitted on all pairs from
the other folds and applied to the held-out instances, so every instance
is recalibrated exactly once by a model that never saw it.

Joint mode fits one map on all pooled top-k pairs and preserves each
instance's label order (the map is monotone non-decreasing, so ranking
metrics are untouched).  Separate mode fits one map per rank position
and re-sorts, which may alter the ranking.

Platt calibrators are fitted on the logit of the dump probabilities so
the logistic family contains the exact inverse of temperature-style
distortions; isotonic fitting is invariant to any such strictly
increasing transform, so it takes raw probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .calibrate import apply_isotonic, apply_platt, fit_isotonic, fit_platt
from .core import ConfigError, PredictionBlock, as_prediction_block, as_truth_block
from .ingest import check_alignment
from .metrics import ReliabilityBins, StreamingEvaluator

METHODS = ("isotonic", "platt")
MODES = ("joint", "separate")

_LOGIT_EPS = 1e-12


@dataclass(frozen=True)
class FoldAssignment:
    """Deterministic fold index per instance; sizes differ by at most 1."""

    folds: int
    assignment: np.ndarray
    seed: int


@dataclass(frozen=True)
class CalibrationConfig:
    method: str = "isotonic"
    mode: str = "joint"
    k: int = 5
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method: {self.method!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode: {self.mode!r}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")


@dataclass
class RecalibrationResult:
    block: PredictionBlock
    warnings: list[str]
    fold_assignment: FoldAssignment


def assign_folds(n: int, folds: int, seed: int) -> FoldAssignment:
    """Seeded pseudo-random shuffle of instance indices dealt round-robin
    into folds (contiguous blocks would be biased if the dump is sorted)."""
    if folds < 2:
        raise ConfigError("folds must be >= 2")
    if n < folds:
        raise ConfigError(f"need at least {folds} instances for {folds} folds, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n, dtype=np.int64) % folds
    return FoldAssignment(folds, assignment, seed)


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, _LOGIT_EPS, 1.0 - _LOGIT_EPS)
    return np.log(p) - np.log1p(-p)


def _fit(method: str, probs: np.ndarray, y: np.ndarray):
    if method == "isotonic":
        return fit_isotonic(probs, y)
    return fit_platt(_logit(probs), y)


def _apply(method: str, model, probs: np.ndarray) -> np.ndarray:
    if method == "isotonic":
        return apply_isotonic(model, probs)
    return apply_platt(model, _logit(probs))


def joint_calibrate(preds, truth, method: str, k: int):
    """Fit a single calibrator on all pooled (prob, correctness) pairs
    from ranks 1..k."""
    if method not in METHODS:
        raise ConfigError(f"unknown method: {method!r}")
    pairs = metrics.topk_pairs(preds, truth, k)
    if len(pairs.conf) == 0:
        raise ValueError("no data")
    return _fit(method, pairs.conf, pairs.y)


def separate_calibrate(preds, truth, method: str, k: int) -> list:
    """Fit one calibrator per rank position r = 1..k on pairs at exactly
    rank r."""
    if method not in METHODS:
        raise ConfigError(f"unknown method: {method!r}")
    pairs = metrics.topk_pairs(preds, truth, k)
    models = []
    for r in range(k):
        mask = pairs.ranks == r
        if not mask.any():
            raise ValueError("empty rank slice")
        models.append(_fit(method, pairs.conf[mask], pairs.y[mask]))
    return models


def kfold_recalibrate(preds, truth, config: CalibrationConfig) -> RecalibrationResult:
    """Recalibrate a dump under the cross-validation protocol.

    Folds with a single outcome class under Platt fall back to a constant
    model; each such event is recorded as a warning.
    """
    p = as_prediction_block(preds)
    t = as_truth_block(truth)
    if t.n_rows != p.n_rows:
        raise ValueError(
            f"aligned inputs required: {t.n_rows} truth rows vs {p.n_rows} prediction rows"
        )
    fa = assign_folds(p.n_rows, config.folds, config.seed)
    pairs = metrics.topk_pairs(p, t, config.k)
    pair_fold = fa.assignment[pairs.rows]

    lengths = p.lengths()
    entry_rows = np.repeat(np.arange(p.n_rows, dtype=np.int64), lengths)
    entry_fold = fa.assignment[entry_rows]
    entry_ranks = np.arange(len(p.probs), dtype=np.int64) - np.repeat(p.row_ptr[:-1], lengths)
    model_slot = np.minimum(entry_ranks, config.k - 1)

    new_probs = np.empty_like(p.probs)
    warnings: list[str] = []
    for f in range(config.folds):
        train = pair_fold != f
        apply_mask = entry_fold == f
        if config.mode == "joint":
            y_train = pairs.y[train]
            if config.method == "platt" and len(y_train) and y_train.min() == y_train.max():
                warnings.append(f"fold {f}: single outcome class, using constant model")
            model = _fit(config.method, pairs.conf[train], y_train)
            new_probs[apply_mask] = _apply(config.method, model, p.probs[apply_mask])
        else:
            for r in range(config.k):
                slice_mask = train & (pairs.ranks == r)
                if not slice_mask.any():
                    raise ValueError("empty rank slice")
                y_train = pairs.y[slice_mask]
                if config.method == "platt" and y_train.min() == y_train.max():
                    warnings.append(
                        f"fold {f} rank {r + 1}: single outcome class, using constant model"
                    )
                model = _fit(config.method, pairs.conf[slice_mask], y_train)
                sel = apply_mask & (model_slot == r)
                new_probs[sel] = _apply(config.method, model, p.probs[sel])

    labels = p.labels
    if config.mode == "separate":
        # per-rank maps may cross; restore the non-increasing invariant
        order = np.lexsort((labels, -new_probs, entry_rows))
        labels = labels[order]
        new_probs = new_probs[order]
    block = PredictionBlock(p.ids.copy(), labels.copy(), new_probs, p.row_ptr.copy())
    return RecalibrationResult(block, warnings, fa)


# ---------------------------------------------------------------------------
# metric reports


@dataclass
class KBlock:
    k: int
    ece: float
    ace: float | None
    brier: float
    nll: float
    p_at_k: float
    ndcg_at_k: float
    reliability: ReliabilityBins
    histogram: np.ndarray
    pairs: int


@dataclass
class MetricReport:
    dataset: str
    bins: int
    ks: list[int]
    blocks: dict[int, KBlock]
    deltas: dict[int, dict[str, float]] | None = None
    extras: dict = field(default_factory=dict)


_DELTA_FIELDS = ("ece", "ace", "brier", "nll", "p_at_k", "ndcg_at_k")


def _compute_deltas(report: MetricReport, baseline: MetricReport) -> dict[int, dict[str, float]]:
    deltas: dict[int, dict[str, float]] = {}
    for k, blk in report.blocks.items():
        base = baseline.blocks.get(k)
        if base is None:
            continue
        d = {}
        for name in _DELTA_FIELDS:
            after = getattr(blk, name)
            before = getattr(base, name)
            if after is None or before is None:
                continue
            d[name] = after - before
        deltas[k] = d
    return deltas


def evaluate_report(
    preds,
    truth,
    ks,
    bins: int = 10,
    baseline: MetricReport | None = None,
    dataset: str = "",
) -> MetricReport:
    """Compute the full metric suite for each requested k, with reliability
    bins and confidence histograms for diagram emission."""
    ks = sorted(set(int(k) for k in ks))
    if not ks:
        raise ConfigError("empty ks")
    if ks[0] < 1:
        raise ConfigError("ks must be positive")
    p = as_prediction_block(preds)
    t = as_truth_block(truth)
    check_alignment(p, t)
    blocks = {}
    for k in ks:
        ece, rel = metrics.ece_at_k(p, t, k, bins)
        ace, _ = metrics.ace_at_k(p, t, k, bins)
        blocks[k] = KBlock(
            k=k,
            ece=ece,
            ace=ace,
            brier=metrics.brier(p, t, k),
            nll=metrics.nll(p, t, k),
            p_at_k=metrics.precision_at_k(p, t, k),
            ndcg_at_k=metrics.ndcg_at_k(p, t, k),
            reliability=rel,
            histogram=metrics.confidence_histogram(p, k, bins),
            pairs=rel.n_pairs,
        )
    report = MetricReport(dataset, bins, ks, blocks)
    if baseline is not None:
        report.deltas = _compute_deltas(report, baseline)
    return report


def _rebatch(pred_blocks, truth_blocks):
    """Yield row-aligned (pred, truth) sub-blocks from independently
    chunked streams; raise AlignmentError when totals differ."""
    pred_iter = iter(pred_blocks)
    truth_iter = iter(truth_blocks)
    pred_buf = truth_buf = None
    n_pred = n_truth = 0
    while True:
        while pred_buf is None or pred_buf.n_rows == 0:
            pred_buf = next(pred_iter, None)
            if pred_buf is None:
                break
            n_pred += pred_buf.n_rows
        while truth_buf is None or truth_buf.n_rows == 0:
            truth_buf = next(truth_iter, None)
            if truth_buf is None:
                break
            n_truth += truth_buf.n_rows
        if pred_buf is None or truth_buf is None:
            break
        take = min(pred_buf.n_rows, truth_buf.n_rows)
        yield _slice_pred(pred_buf, take), _slice_truth(truth_buf, take)
        pred_buf = _slice_pred_rest(pred_buf, take)
        truth_buf = _slice_truth_rest(truth_buf, take)
    for blk in pred_iter:
        n_pred += blk.n_rows
    for blk in truth_iter:
        n_truth += blk.n_rows
    if n_pred != n_truth:
        from .ingest import AlignmentError

        raise AlignmentError(
            f"alignment mismatch: {n_truth} truth rows vs {n_pred} prediction rows"
        )


def _slice_pred(b: PredictionBlock, take: int) -> PredictionBlock:
    cut = int(b.row_ptr[take])
    return PredictionBlock(b.ids[:take], b.labels[:cut], b.probs[:cut], b.row_ptr[: take + 1])


def _slice_pred_rest(b: PredictionBlock, take: int) -> PredictionBlock:
    cut = int(b.row_ptr[take])
    return PredictionBlock(
        b.ids[take:], b.labels[cut:], b.probs[cut:], b.row_ptr[take:] - cut
    )


def _slice_truth(b, take: int):
    from .core import TruthBlock

    cut = int(b.row_ptr[take])
    return TruthBlock(b.labels[:cut], b.row_ptr[: take + 1], b.m, b.ids[:take])


def _slice_truth_rest(b, take: int):
    from .core import TruthBlock

    cut = int(b.row_ptr[take])
    return TruthBlock(b.labels[cut:], b.row_ptr[take:] - cut, b.m, b.ids[take:])


def evaluate_report_streaming(
    pred_blocks,
    truth_blocks,
    ks,
    bins: int = 10,
    dataset: str = "",
    strict_ids: bool = False,
) -> MetricReport:
    """Single-pass evaluation over block streams with O(bins) memory.

    ACE requires the full pooled pair set and is reported as None here;
    use :func:`evaluate_report` when the data fits in memory.
    """
    ks = sorted(set(int(k) for k in ks))
    if not ks:
        raise ConfigError("empty ks")
    ev = StreamingEvaluator(ks, bins)
    for pred_blk, truth_blk in _rebatch(pred_blocks, truth_blocks):
        if strict_ids:
            check_alignment(pred_blk, truth_blk, strict_ids=True)
        ev.update(pred_blk, truth_blk)
    result = ev.result()
    blocks = {}
    for k in ks:
        r = result[k]
        blocks[k] = KBlock(
            k=k,
            ece=r["ece"],
            ace=None,
            brier=r["brier"],
            nll=r["nll"],
            p_at_k=r["p_at_k"],
            ndcg_at_k=r["ndcg_at_k"],
            reliability=r["reliability"],
            histogram=r["histogram"],
            pairs=r["pairs"],
        )
    return MetricReport(dataset, bins, ks, blocks)
