"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

import numpy as np

__all__ = ["check_frames", "check_utterance_list", "check_labels"]


def check_frames(frames, name: str = "frames") -> np.ndarray:
    """Coerce one utterance to a finite float64 ``T x F`` array."""
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D (frames x features) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_utterance_list(X, name: str = "X") -> list[np.ndarray]:
    """Validate a sequence of frame arrays sharing one feature dimension."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    utterances = [check_frames(x, f"{name}[{i}]") for i, x in enumerate(X)]
    if not utterances:
        raise ValueError(f"{name} is empty")
    dims = {u.shape[1] for u in utterances}
    if len(dims) != 1:
        raise ValueError(f"{name} mixes feature dimensions {sorted(dims)}")
    return utterances


def check_labels(y, n: int, name: str = "y") -> list[str]:
    """Validate per-utterance speaker labels and return them as strings."""
    if y is None:
        raise ValueError(f"{name} (speaker labels) is required")
    labels = [str(v) for v in np.asarray(y).reshape(-1)]
    if len(labels) != n:
        raise ValueError(f"{name} has {len(labels)} labels for {n} utterances")
    return labels
