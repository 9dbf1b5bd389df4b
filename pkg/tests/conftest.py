import numpy as np
import pytest

from xcal import _kernels
from xcal.core import GroundTruth, PredictionBlock, TopKPredictions, TruthBlock


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # JIT compilation happens once here so timed tests measure steady state
    _kernels.warmup()


def make_preds(rows):
    """rows: list of list of (label, prob)."""
    return PredictionBlock.from_rows(
        TopKPredictions(i, tuple(entries)) for i, entries in enumerate(rows)
    )


def make_truth(sets, m=None):
    return TruthBlock.from_rows(
        (GroundTruth(i, frozenset(s)) for i, s in enumerate(sets)), m=m
    )


def random_world_pairs(rng, n, max_len=8, m=50):
    """Random aligned (preds, truth) blocks for property tests."""
    rows = []
    sets = []
    for _ in range(n):
        length = int(rng.integers(0, max_len + 1))
        labels = rng.choice(m, size=length, replace=False)
        probs = np.sort(rng.random(length))[::-1]
        rows.append(list(zip(labels.tolist(), probs.tolist())))
        n_rel = int(rng.integers(0, 6))
        sets.append(set(rng.choice(m, size=n_rel, replace=False).tolist()))
    return make_preds(rows), make_truth(sets, m=m)


def fast_random_blocks(rng, n_rows, max_len=8, m=50, max_rel=5):
    """Vectorised version of random_world_pairs for large row counts."""
    lengths = rng.integers(0, max_len + 1, n_rows).astype(np.int64)
    total = int(lengths.sum())
    rows = np.repeat(np.arange(n_rows, dtype=np.int64), lengths)
    rank = np.arange(total, dtype=np.int64) - np.repeat(
        np.concatenate(([0], np.cumsum(lengths)[:-1])), lengths
    )
    # distinct labels per row via random key ranking over the label space
    cand = np.argpartition(rng.random((n_rows, m)), max_len, axis=1)[:, :max_len]
    labels = cand[rows, rank].astype(np.int64)
    vals = rng.random(total)
    order = np.lexsort((-vals, rows))
    probs = vals[order]
    row_ptr = np.concatenate(([0], np.cumsum(lengths))).astype(np.int64)
    preds = PredictionBlock(np.arange(n_rows, dtype=np.int64), labels, probs, row_ptr)

    t_lengths = rng.integers(0, max_rel + 1, n_rows).astype(np.int64)
    t_total = int(t_lengths.sum())
    t_rows = np.repeat(np.arange(n_rows, dtype=np.int64), t_lengths)
    t_rank = np.arange(t_total, dtype=np.int64) - np.repeat(
        np.concatenate(([0], np.cumsum(t_lengths)[:-1])), t_lengths
    )
    t_cand = np.argpartition(rng.random((n_rows, m)), max_rel, axis=1)[:, :max_rel]
    t_labels = t_cand[t_rows, t_rank].astype(np.int64)
    t_order = np.lexsort((t_labels, t_rows))
    truth = TruthBlock(
        t_labels[t_order],
        np.concatenate(([0], np.cumsum(t_lengths))).astype(np.int64),
        m,
    )
    return preds, truth
