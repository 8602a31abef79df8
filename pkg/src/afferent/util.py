"""Small numeric helpers used across modules."""

from __future__ import annotations

import numpy as np

__all__ = [
    "sigmoid",
    "softplus",
    "inv_softplus",
    "rng_for",
    "percentile_95",
]


def sigmoid(x):
    """Numerically stable logistic function, exact 0/1 in the saturated tails."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    x = np.asarray(x, dtype=float)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    if out.ndim == 0:
        return float(out)
    return out


def inv_softplus(y):
    """Inverse of softplus on y > 0: log(expm1(y)), stable for large y."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("inv_softplus requires positive input")
    # for large y, log(expm1(y)) ~ y; the log1p form avoids overflow
    out = y + np.log1p(-np.exp(-y))
    if out.ndim == 0:
        return float(out)
    return out


def rng_for(*keys: int) -> np.random.Generator:
    """Deterministic generator derived from a tuple of integer keys."""
    return np.random.default_rng(np.random.SeedSequence(tuple(int(k) for k in keys)))


def percentile_95(values) -> float:
    """95th percentile as an order statistic: the ceil(0.95 n)-th smallest value."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("percentile of empty set")
    k = int(np.ceil(0.95 * v.size)) - 1
    k = max(k, 0)
    return float(np.partition(v, k)[k])
