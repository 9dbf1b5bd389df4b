"""Post-hoc calibration maps: isotonic regression (PAV) and Platt scaling.

Fitting is a single-owner computation; fitted models are immutable and
their application is pure, so they can be shared freely across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import pav
from .core import MinMaxSquash


@dataclass(frozen=True)
class IsotonicModel:
    """Monotone step function: ``thresholds`` strictly ascending score
    breakpoints, ``values`` the non-decreasing fitted level of each block."""

    thresholds: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if len(t) != len(v) or len(t) == 0:
            raise ValueError("thresholds and values must be equal-length and non-empty")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("thresholds must be strictly ascending")
        if len(v) > 1 and not np.all(np.diff(v) >= 0):
            raise ValueError("values must be non-decreasing")
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class PlattModel:
    """Two-parameter logistic map s -> 1 / (1 + exp(a*s + b))."""

    a: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError("Platt parameters must be finite")


def fit_isotonic(scores, outcomes) -> IsotonicModel:
    """Least-squares monotone fit of outcomes against scores via PAV.

    Tied scores are merged into a single block before pooling (a monotone
    function cannot separate equal inputs).  All-identical outcomes give a
    valid constant model.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(outcomes, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and outcomes must be equal-length 1-d arrays")
    if len(s) < 2:
        raise ValueError("insufficient calibration data")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")

    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # merge tied scores into blocks
    boundary = np.concatenate(([True], np.diff(s_sorted) != 0))
    starts = np.flatnonzero(boundary)
    block_scores = s_sorted[starts]
    block_w = np.diff(np.concatenate((starts, [len(s_sorted)]))).astype(np.float64)
    block_mean = np.add.reduceat(y_sorted, starts) / block_w

    fitted = pav(block_mean, block_w)

    # compress to value-change breakpoints
    keep = np.concatenate(([True], np.diff(fitted) != 0))
    return IsotonicModel(block_scores[keep], fitted[keep])


def apply_isotonic(model: IsotonicModel, score):
    """Piecewise-constant evaluation; scores outside the fitted range clamp
    to the first/last value."""
    s = np.asarray(score, dtype=np.float64)
    idx = np.searchsorted(model.thresholds, s, side="right") - 1
    idx = np.clip(idx, 0, len(model.values) - 1)
    out = model.values[idx]
    return float(out) if np.isscalar(score) or out.ndim == 0 else out


_PRIOR_CLAMP = 1e-6


def _constant_platt(rate: float) -> PlattModel:
    p = min(max(rate, _PRIOR_CLAMP), 1.0 - _PRIOR_CLAMP)
    return PlattModel(0.0, -float(np.log(p / (1.0 - p))))


def fit_platt(scores, outcomes, *, tol: float = 1e-8, max_iter: int = 100) -> PlattModel:
    """Fit (a, b) minimising mean binary cross-entropy of 1/(1+exp(a*s+b)).

    Damped Newton iteration; stops when the gradient infinity-norm drops
    below ``tol``.  One-class inputs yield the constant-matching model with
    the empirical rate clamped away from {0, 1}.  Targets are the raw 0/1
    outcomes; the classic label-prior smoothing of the targets is omitted.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(outcomes, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and outcomes must be equal-length 1-d arrays")
    if len(s) < 2:
        raise ValueError("insufficient calibration data")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")

    rate = float(y.mean())
    if y.min() == y.max():
        return _constant_platt(rate)

    def predict(a, b):
        z = a * s + b
        t = np.exp(-np.abs(z))  # t = exp(z) wherever z < 0
        return np.where(z >= 0, t / (1.0 + t), 1.0 / (1.0 + t))

    def loss(a, b):
        p = np.clip(predict(a, b), 1e-300, 1.0 - 1e-16)
        return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))

    a = 0.0
    rate_c = min(max(rate, _PRIOR_CLAMP), 1.0 - _PRIOR_CLAMP)
    b = -float(np.log(rate_c / (1.0 - rate_c)))
    current = loss(a, b)
    for _ in range(max_iter):
        p = predict(a, b)
        resid = y - p  # d(BCE)/dz per point is exactly y - p for z = a*s + b
        g_a = float(np.mean(resid * s))
        g_b = float(np.mean(resid))
        if max(abs(g_a), abs(g_b)) < tol:
            break
        w = p * (1.0 - p)
        h_aa = float(np.mean(w * s * s)) + 1e-12
        h_ab = float(np.mean(w * s))
        h_bb = float(np.mean(w)) + 1e-12
        det = h_aa * h_bb - h_ab * h_ab
        if det <= 0:
            det = 1e-12
        d_a = -(h_bb * g_a - h_ab * g_b) / det
        d_b = -(h_aa * g_b - h_ab * g_a) / det
        step = 1.0
        for _ in range(60):
            candidate = loss(a + step * d_a, b + step * d_b)
            if candidate <= current:
                break
            step *= 0.5
        else:
            break
        a += step * d_a
        b += step * d_b
        current = candidate
    return PlattModel(a, b)


def apply_platt(model: PlattModel, score):
    """Evaluate 1 / (1 + exp(a*score + b)) without overflow."""
    s = np.asarray(score, dtype=np.float64)
    z = model.a * s + model.b
    t = np.exp(-np.abs(z))  # t = exp(z) wherever z < 0
    out = np.where(z >= 0, t / (1.0 + t), 1.0 / (1.0 + t))
    return float(out) if np.isscalar(score) or out.ndim == 0 else out


def apply_calibrator(model, score):
    if isinstance(model, IsotonicModel):
        return apply_isotonic(model, score)
    if isinstance(model, PlattModel):
        return apply_platt(model, score)
    if isinstance(model, MinMaxSquash):
        from .core import minmax_squash

        return minmax_squash(score, model)
    raise TypeError(f"unknown calibrator type: {type(model).__name__}")


# ---------------------------------------------------------------------------
# model serialization (versioned text format)

_FORMAT_TAG = "xcal-calibrator v1"


def serialize_model(model) -> str:
    lines = [_FORMAT_TAG]
    if isinstance(model, IsotonicModel):
        lines.append("kind isotonic")
        lines.append("thresholds " + " ".join(repr(float(t)) for t in model.thresholds))
        lines.append("values " + " ".join(repr(float(v)) for v in model.values))
    elif isinstance(model, PlattModel):
        lines.append("kind platt")
        lines.append(f"a {model.a!r}")
        lines.append(f"b {model.b!r}")
    elif isinstance(model, MinMaxSquash):
        lines.append("kind minmax")
        lines.append(f"min {model.min!r}")
        lines.append(f"max {model.max!r}")
    else:
        raise TypeError(f"unknown calibrator type: {type(model).__name__}")
    return "\n".join(lines) + "\n"


def parse_model(text: str):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _FORMAT_TAG:
        raise ValueError("unknown calibrator format")
    fields = {}
    for ln in lines[1:]:
        key, _, value = ln.partition(" ")
        fields[key] = value
    kind = fields.get("kind")
    if kind == "isotonic":
        return IsotonicModel(
            np.array(fields["thresholds"].split(), dtype=np.float64),
            np.array(fields["values"].split(), dtype=np.float64),
        )
    if kind == "platt":
        return PlattModel(float(fields["a"]), float(fields["b"]))
    if kind == "minmax":
        return MinMaxSquash(float(fields["min"]), float(fields["max"]))
    raise ValueError(f"unknown calibrator kind: {kind!r}")
