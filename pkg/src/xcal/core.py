"""Shared domain types, link functions and top-k selection.

Rows are exchanged either as light per-instance records
(:class:`TopKPredictions`, :class:`GroundTruth`) or as columnar batches
(:class:`PredictionBlock`, :class:`TruthBlock`) that the numeric layers
operate on.  All functions here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

LabelId = int


class ConfigError(ValueError):
    """Invalid configuration (bad flag values, impossible parameter combos)."""


@dataclass(frozen=True)
class TopKPredictions:
    """One instance's ranked shortlist of (label, probability) entries.

    Entries are sorted non-increasing by probability; labels within an
    instance are distinct and probabilities lie in [0, 1].
    """

    instance_id: int
    entries: tuple[tuple[int, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((int(l), float(p)) for l, p in self.entries))
        prev = 2.0
        seen = set()
        for label, prob in self.entries:
            if not 0.0 <= prob <= 1.0:
                raise ValueError(f"probability {prob} outside [0, 1]")
            if prob > prev:
                raise ValueError("entries not sorted non-increasing by probability")
            if label in seen:
                raise ValueError(f"duplicate label {label}")
            seen.add(label)
            prev = prob


@dataclass(frozen=True)
class GroundTruth:
    """The set of relevant labels for one instance."""

    instance_id: int
    relevant: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "relevant", frozenset(int(l) for l in self.relevant))


@dataclass(frozen=True)
class MinMaxSquash:
    """Affine squash of raw scores onto [0, 1], fitted as the global score range."""

    min: float
    max: float

    def __post_init__(self):
        if not self.max > self.min:
            raise ValueError("degenerate score range")

    @classmethod
    def fit(cls, scores) -> "MinMaxSquash":
        arr = np.asarray(scores, dtype=np.float64)
        if arr.size == 0:
            raise ValueError("empty score set")
        return cls(float(arr.min()), float(arr.max()))


@dataclass(frozen=True)
class DenseScoreMatrix:
    """Dense n x m score matrix; desk-scale only (marginal-ECE path)."""

    scores: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("scores must be a 2-d matrix")
        if not np.all(np.isfinite(arr)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", arr)

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def m(self) -> int:
        return self.scores.shape[1]


def select_top_k(row: Sequence[tuple[int, float]], k: int) -> list[tuple[int, float]]:
    """Pick the k highest-scoring (label, score) pairs.

    Sorted non-increasing by score; ties broken by ascending label id.
    Returns all entries when the row is shorter than k.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    items = list(row)
    if not items:
        raise ValueError("empty candidate set")
    items.sort(key=lambda e: (-e[1], e[0]))
    return items[:k]


def sigmoid_link(score):
    """Logistic link 1 / (1 + exp(-score)); saturates instead of overflowing."""
    s = np.asarray(score, dtype=np.float64)
    e = np.exp(-np.abs(s))
    out = np.where(s >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if np.isscalar(score) or out.ndim == 0 else out


def minmax_squash(score, p: MinMaxSquash):
    """Map scores through (s - min) / (max - min), clamping to [0, 1]."""
    if not p.max > p.min:
        raise ValueError("degenerate score range")
    s = np.asarray(score, dtype=np.float64)
    out = np.clip((s - p.min) / (p.max - p.min), 0.0, 1.0)
    return float(out) if np.isscalar(score) or out.ndim == 0 else out


# ---------------------------------------------------------------------------
# columnar batches


@dataclass
class PredictionBlock:
    """Columnar batch of prediction rows.

    ``labels``/``probs`` hold all entries back to back; ``row_ptr`` has
    one offset per row plus a trailing total.  Entries of each row are
    non-increasing by probability.
    """

    ids: np.ndarray
    labels: np.ndarray
    probs: np.ndarray
    row_ptr: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.ids)

    @property
    def k(self) -> int:
        lengths = np.diff(self.row_ptr)
        return int(lengths.max()) if len(lengths) else 0

    def lengths(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    @classmethod
    def from_rows(cls, rows: Iterable[TopKPredictions]) -> "PredictionBlock":
        ids, labels, probs, ptr = [], [], [], [0]
        for row in rows:
            ids.append(row.instance_id)
            for label, prob in row.entries:
                labels.append(label)
                probs.append(prob)
            ptr.append(len(labels))
        return cls(
            np.array(ids, dtype=np.int64),
            np.array(labels, dtype=np.int64),
            np.array(probs, dtype=np.float64),
            np.array(ptr, dtype=np.int64),
        )

    def iter_rows(self) -> Iterator[TopKPredictions]:
        for i in range(self.n_rows):
            lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
            yield TopKPredictions(
                int(self.ids[i]),
                tuple(zip(self.labels[lo:hi].tolist(), self.probs[lo:hi].tolist())),
            )


@dataclass
class TruthBlock:
    """Columnar batch of ground-truth label sets (labels sorted per row)."""

    labels: np.ndarray
    row_ptr: np.ndarray
    m: int | None = None
    ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.ids is None:
            self.ids = np.arange(len(self.row_ptr) - 1, dtype=np.int64)

    @property
    def n_rows(self) -> int:
        return len(self.row_ptr) - 1

    def counts(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    @classmethod
    def from_rows(cls, rows: Iterable[GroundTruth], m: int | None = None) -> "TruthBlock":
        ids, labels, ptr = [], [], [0]
        for row in rows:
            ids.append(row.instance_id)
            labels.extend(sorted(row.relevant))
            ptr.append(len(labels))
        return cls(
            np.array(labels, dtype=np.int64),
            np.array(ptr, dtype=np.int64),
            m,
            np.array(ids, dtype=np.int64),
        )

    def iter_rows(self) -> Iterator[GroundTruth]:
        for i in range(self.n_rows):
            lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
            yield GroundTruth(int(self.ids[i]), frozenset(self.labels[lo:hi].tolist()))


def as_prediction_block(preds) -> PredictionBlock:
    if isinstance(preds, PredictionBlock):
        return preds
    return PredictionBlock.from_rows(preds)


def as_truth_block(truth) -> TruthBlock:
    if isinstance(truth, TruthBlock):
        return truth
    return TruthBlock.from_rows(truth)
