"""Numerically stable scalar/vector kernels shared by every objective.

All routines operate on 1-D double precision arrays and plain floats.
They are pure functions; callers may invoke them concurrently.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "cosine_similarity",
    "squared_euclidean",
    "log_sum_exp",
    "softmax",
    "softmax_cross_entropy",
]


def _as_vector(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"{name} must be a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between ``a`` and ``b``, clamped to [-1, 1].

    The clamp guards downstream ``arccos`` against rounding overshoot of
    order 1e-16.  Zero-norm inputs are rejected rather than smoothed: a
    silent epsilon would hide embedding collapse during training.
    """
    a = _as_vector(a, "a")
    b = _as_vector(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0:
        raise ValueError("zero-norm input: first argument `a` is degenerate")
    if nb == 0.0:
        raise ValueError("zero-norm input: second argument `b` is degenerate")
    c = float(np.dot(a, b) / (na * nb))
    return min(1.0, max(-1.0, c))


def squared_euclidean(a, b) -> float:
    """Sum of squared coordinate differences between two equal-length vectors."""
    a = _as_vector(a, "a")
    b = _as_vector(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    d = a - b
    return float(np.dot(d, d))


def log_sum_exp(logits) -> float:
    """``max + log(sum(exp(x - max)))``; finite for logit magnitudes up to 1e4."""
    x = _as_vector(logits, "logits")
    m = float(np.max(x))
    return m + float(np.log(np.sum(np.exp(x - m))))


def softmax(logits) -> np.ndarray:
    """Shift-stabilized softmax over a 1-D logit vector."""
    x = _as_vector(logits, "logits")
    e = np.exp(x - np.max(x))
    return e / np.sum(e)


def softmax_cross_entropy(logits, target_index: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of a softmax distribution against a one-hot target.

    Returns ``(loss, grad_logits)`` with ``loss = logsumexp(z) - z[target]``
    and ``grad = softmax(z) - one_hot(target)``.
    """
    x = _as_vector(logits, "logits")
    t = int(target_index)
    if not 0 <= t < x.shape[0]:
        raise ValueError(f"target_index {t} out of range for {x.shape[0]} logits")
    loss = log_sum_exp(x) - float(x[t])
    grad = softmax(x)
    grad[t] -= 1.0
    return loss, grad
