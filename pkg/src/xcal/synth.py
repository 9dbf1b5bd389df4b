"""Synthetic long-tail multi-label worlds with known conditionals.

Every instance carries a small pool of candidate labels sampled from a
power-law prior; each pool entry gets a true conditional probability
drawn from a slot-dependent Beta so that the expected number of positive
labels per instance is about 5.  Labels outside the pool have
conditional probability 0.  Sampled outcomes are independent Bernoulli
draws from the conditionals.

Parametric distortions turn the true conditionals into miscalibrated
scores: temperature sharpening/flattening in logit space, midrange
compression toward 0.5 (the two-tower regime), and per-instance softmax
normalization.  ``analytic_ece`` evaluates the binned estimator with the
true conditionals in place of sampled outcomes, giving an oracle with no
outcome-sampling noise.

Generation is blocked in fixed ranges of ``BLOCK`` instances, each with
its own counter-derived substream, so generating any sub-range of
instances (in any order) reproduces the sequential output bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GroundTruth, PredictionBlock, TruthBlock
from .ingest import RepoHeader
from .metrics import binned_error, canonical_edges, topk_pairs
from ._kernels import bin_stats

BLOCK = 4096
LOGIT_CLAMP = 36.7  # sigmoid saturates to within unit roundoff beyond this

_TARGET_POSITIVES = 5.0
# Bimodal slot profile: one high-confidence head slot plus a power-law
# tail of low/mid slots.  Keeps expected positives at the target while
# placing top-k mass where the distortion regimes bite.
_HEAD_MEAN = 0.85
_HEAD_CONCENTRATION = 25.0
_REST_DECAY = 0.45
_REST_CONCENTRATION = 12.0
_MAX_SLOT_MEAN = 0.97

DISTORTION_KINDS = ("identity", "temperature", "midrange", "softmax_normalize")


@dataclass(frozen=True)
class Distortion:
    kind: str
    param: float | None = None

    def __post_init__(self):
        if self.kind not in DISTORTION_KINDS:
            raise ValueError(f"unknown distortion kind: {self.kind!r}")
        if self.kind in ("temperature", "midrange"):
            if self.param is None or not self.param > 0:
                raise ValueError(f"{self.kind} requires a positive parameter")
        elif self.param is not None:
            raise ValueError(f"{self.kind} takes no parameter")

    @classmethod
    def parse(cls, spec: str) -> "Distortion":
        kind, _, param = spec.partition(":")
        return cls(kind, float(param) if param else None)


@dataclass
class SyntheticWorld:
    """Ground-truth conditionals plus sampled outcomes.

    ``pool_labels``/``eta``/``y`` are (n, P) arrays; rows are padded with
    label -1 and eta 0 beyond ``pool_sizes``.
    """

    n: int
    m: int
    k: int
    seed: int
    tail_exponent: float
    pool_labels: np.ndarray
    eta: np.ndarray
    y: np.ndarray
    pool_sizes: np.ndarray

    def header(self) -> RepoHeader:
        return RepoHeader(self.n, 1, self.m)

    def truth_block(self) -> TruthBlock:
        mask = self.y.astype(bool)
        counts = mask.sum(axis=1)
        return TruthBlock(
            self.pool_labels[mask].astype(np.int64),
            np.concatenate(([0], np.cumsum(counts))).astype(np.int64),
            self.m,
        )

    def truth_rows(self):
        for i in range(self.n):
            mask = self.y[i].astype(bool)
            yield GroundTruth(i, frozenset(self.pool_labels[i][mask].tolist()))

    def eta_lookup(self, ids: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """True conditional for (instance, label) pairs; 0 off-pool."""
        if len(ids) and (ids.min() < 0 or ids.max() >= self.n):
            raise ValueError("unknown instance")
        keys = ids.astype(np.int64) * self.m + labels.astype(np.int64)
        valid = self.pool_labels >= 0
        rows = np.nonzero(valid)[0].astype(np.int64)
        world_keys = rows * self.m + self.pool_labels[valid].astype(np.int64)
        order = np.argsort(world_keys)
        sorted_keys = world_keys[order]
        sorted_eta = self.eta[valid][order]
        pos = np.searchsorted(sorted_keys, keys)
        out = np.zeros(len(keys), np.float64)
        hit = (pos < len(sorted_keys)) & (sorted_keys[np.minimum(pos, len(sorted_keys) - 1)] == keys)
        out[hit] = sorted_eta[pos[hit]]
        return out

    def dense_true_probs(self, max_cells: int = 50_000_000) -> np.ndarray:
        """Materialise the full n x m conditional matrix (desk scale only)."""
        if self.n * self.m > max_cells:
            raise ValueError("dense matrix too large")
        out = np.zeros((self.n, self.m), np.float64)
        valid = self.pool_labels >= 0
        rows = np.nonzero(valid)[0]
        out[rows, self.pool_labels[valid]] = self.eta[valid]
        return out

    def dense_outcomes(self, max_cells: int = 50_000_000) -> np.ndarray:
        if self.n * self.m > max_cells:
            raise ValueError("dense matrix too large")
        out = np.zeros((self.n, self.m), np.float64)
        mask = self.y.astype(bool)
        rows = np.nonzero(mask)[0]
        out[rows, self.pool_labels[mask]] = 1.0
        return out


def _slot_params(pool: int) -> tuple[np.ndarray, np.ndarray]:
    if pool == 1:
        means = np.array([_HEAD_MEAN])
        conc = np.array([_HEAD_CONCENTRATION])
    else:
        r = np.arange(1, pool, dtype=np.float64)
        rest = r ** (-_REST_DECAY)
        rest *= (_TARGET_POSITIVES - _HEAD_MEAN) / rest.sum()
        means = np.concatenate(([_HEAD_MEAN], np.minimum(rest, _MAX_SLOT_MEAN)))
        conc = np.concatenate(
            ([_HEAD_CONCENTRATION], np.full(pool - 1, _REST_CONCENTRATION))
        )
    return means * conc, (1.0 - means) * conc


def _world_params(n, m, k, tail_exponent, pool_size):
    if n < 1 or m < 1 or k < 1:
        raise ValueError("n, m, k must be positive")
    if k > m:
        raise ValueError("k exceeds label count")
    if not tail_exponent > 0:
        raise ValueError("tail_exponent must be positive")
    pool = pool_size if pool_size is not None else min(m, max(32, 4 * k))
    if pool < k or pool > m:
        raise ValueError("pool size must satisfy k <= pool <= m")
    weights = (np.arange(m, dtype=np.float64) + 1.0) ** (-tail_exponent)
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    a, b = _slot_params(pool)
    return pool, cdf, a, b


def generate_world(
    n: int,
    m: int,
    k: int,
    tail_exponent: float,
    seed: int,
    pool_size: int | None = None,
) -> SyntheticWorld:
    """Build a reproducible synthetic world.

    Label priors follow ``(id + 1) ** -tail_exponent``; per-instance pools
    are the unique labels of a batch of prior draws, ordered ascending so
    head labels occupy the high-mean slots.
    """
    pool, cdf, a, b = _world_params(n, m, k, tail_exponent, pool_size)
    pool_labels = np.full((n, pool), -1, dtype=np.int64)
    eta = np.zeros((n, pool), np.float64)
    y = np.zeros((n, pool), np.uint8)
    sizes = np.zeros(n, np.int64)
    for start in range(0, n, BLOCK):
        stop = min(start + BLOCK, n)
        _generate_block(
            start // BLOCK, stop - start, seed, cdf, a, b, pool, k,
            pool_labels[start:stop], eta[start:stop], y[start:stop], sizes[start:stop],
        )
    return SyntheticWorld(n, m, k, seed, tail_exponent, pool_labels, eta, y, sizes)


def _generate_block(block_idx, rows, seed, cdf, a, b, pool, k,
                    out_labels, out_eta, out_y, out_sizes):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), block_idx]))
    draws = max(96, 4 * pool)
    u_pool = rng.random((rows, draws))
    beta = rng.beta(a, b, size=(rows, pool))
    u_y = rng.random((rows, pool))

    sampled = np.searchsorted(cdf, u_pool, side="right")
    sampled.sort(axis=1)
    first = np.concatenate(
        (np.ones((rows, 1), dtype=bool), sampled[:, 1:] != sampled[:, :-1]), axis=1
    )
    slot = np.cumsum(first, axis=1) - 1
    keep = first & (slot < pool)
    r_idx, _ = np.nonzero(keep)
    out_labels[r_idx, slot[keep]] = sampled[keep]
    counts = np.minimum(first.sum(axis=1), pool)
    out_sizes[:] = counts

    cols = np.arange(pool)
    valid = cols[None, :] < counts[:, None]
    out_eta[:] = np.where(valid, beta, 0.0)

    short = np.flatnonzero(counts < k)
    for i in short.tolist():
        have = set(out_labels[i, : counts[i]].tolist())
        fill = counts[i]
        candidate = 0
        while fill < k:
            if candidate not in have:
                out_labels[i, fill] = candidate
                out_eta[i, fill] = beta[i, fill]
                fill += 1
            candidate += 1
        out_sizes[i] = k

    out_y[:] = (u_y < out_eta).astype(np.uint8)


def iter_blocks(
    n: int,
    m: int,
    k: int,
    tail_exponent: float,
    seed: int,
    pool_size: int | None = None,
):
    """Yield (instance offset, block-local SyntheticWorld) pairs.

    Block worlds use the same counter-derived substreams as
    :func:`generate_world`, so stitching them reproduces the full world
    bit-for-bit while keeping memory proportional to one block.
    """
    pool, cdf, a, b = _world_params(n, m, k, tail_exponent, pool_size)
    for start in range(0, n, BLOCK):
        rows = min(BLOCK, n - start)
        pool_labels = np.full((rows, pool), -1, dtype=np.int64)
        eta = np.zeros((rows, pool), np.float64)
        y = np.zeros((rows, pool), np.uint8)
        sizes = np.zeros(rows, np.int64)
        _generate_block(start // BLOCK, rows, seed, cdf, a, b, pool, k,
                        pool_labels, eta, y, sizes)
        yield start, SyntheticWorld(rows, m, k, seed, tail_exponent,
                                    pool_labels, eta, y, sizes)


def distort(world: SyntheticWorld, d: Distortion) -> PredictionBlock:
    """Score the world's pools through a distortion and select top-k."""
    eta = world.eta
    if d.kind == "identity":
        scores = eta.copy()
    elif d.kind == "temperature":
        with np.errstate(divide="ignore"):
            logits = np.log(eta) - np.log1p(-eta)
        np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP, out=logits)
        z = logits / d.param
        t = np.exp(-np.abs(z))
        scores = np.where(z >= 0, 1.0 / (1.0 + t), t / (1.0 + t))
    elif d.kind == "midrange":
        delta = eta - 0.5
        scores = 0.5 + np.sign(delta) * np.abs(delta) ** d.param * 0.5 ** (1.0 - d.param)
    else:  # softmax_normalize
        totals = eta.sum(axis=1, keepdims=True)
        scores = eta / np.where(totals > 0, totals, 1.0)

    masked = np.where(world.pool_labels >= 0, scores, -np.inf)
    order = np.argsort(-masked, axis=1, kind="stable")[:, : world.k]
    labels = np.take_along_axis(world.pool_labels, order, axis=1)
    probs = np.take_along_axis(scores, order, axis=1)
    n = world.n
    return PredictionBlock(
        np.arange(n, dtype=np.int64),
        labels.ravel().astype(np.int64),
        probs.ravel().astype(np.float64),
        (np.arange(n + 1, dtype=np.int64) * world.k),
    )


def analytic_ece(world: SyntheticWorld, dump, k: int, bins: int = 10) -> float:
    """Binned calibration error with exact conditionals as correctness."""
    pairs = topk_pairs(dump, None, k)
    if len(pairs.conf) == 0:
        raise ValueError("no data")
    eta = world.eta_lookup(pairs.ids, pairs.labels)
    counts, sum_conf, sum_y = bin_stats(pairs.conf, eta, canonical_edges(bins))
    return binned_error(counts, sum_conf, sum_y, len(pairs.conf))


def apply_temperature(probs: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature map in logit space; applying T then 1/T recovers the input."""
    with np.errstate(divide="ignore"):
        logits = np.log(probs) - np.log1p(-probs)
    np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP, out=logits)
    z = logits / temperature
    t = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + t), t / (1.0 + t))
