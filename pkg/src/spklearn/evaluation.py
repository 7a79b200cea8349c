"""Open-set verification protocol: multi-crop scoring and Equal Error Rate.

Each test utterance contributes a fixed number of equally spaced temporal
crops; a trial's score is the mean similarity over all crop pairs of its two
utterances.  The EER sweep walks every distinct score threshold, computes
the false-rejection and false-acceptance rates, and linearly interpolates
the crossing between adjacent operating points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import EmbedderParams, Utterance, embed, instance_normalize

__all__ = [
    "Trial",
    "ScoredTrials",
    "EvalReport",
    "ten_crop",
    "score_trial",
    "compute_eer",
    "evaluate",
]


@dataclass(frozen=True)
class Trial:
    """One verification trial: two utterance handles and the ground truth."""

    handle_a: str
    handle_b: str
    is_same: bool

    def __post_init__(self):
        if self.handle_a == self.handle_b:
            raise ValueError(f"trial compares utterance {self.handle_a!r} with itself")


@dataclass
class ScoredTrials:
    """Per-trial scores (higher = more likely same speaker) and targets."""

    scores: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        t = np.asarray(self.targets, dtype=bool).reshape(-1)
        if s.shape != t.shape:
            raise ValueError("scores and targets must have equal length")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores contain non-finite entries")
        self.scores = s
        self.targets = t


@dataclass
class EvalReport:
    """EER with its operating threshold and the full ROC sample points."""

    eer: float
    threshold: float
    n_target: int
    n_nontarget: int
    operating_points: np.ndarray  # rows of (threshold, FRR, FAR)
    metadata: dict = field(default_factory=dict)


def ten_crop(u: Utterance, crop_len: int, num_crops: int = 10) -> list[Utterance]:
    """Fixed-length windows whose starts are evenly spaced over the slack.

    Crops have length ``min(crop_len, T)``; when the utterance is no longer
    than the crop every window starts at 0, so the output count is always
    exactly ``num_crops``.  Start offsets are rounded half-up to whole
    frames.
    """
    if crop_len < 1:
        raise ValueError(f"crop_len must be >= 1, got {crop_len}")
    if num_crops < 1:
        raise ValueError(f"num_crops must be >= 1, got {num_crops}")
    t = u.num_frames
    length = min(crop_len, t)
    slack = t - length
    if num_crops == 1:
        starts = [0]
    else:
        starts = [
            int(np.floor(k * slack / (num_crops - 1) + 0.5)) for k in range(num_crops)
        ]
    return [Utterance(frames=u.frames[s : s + length], speaker=u.speaker) for s in starts]


def _normalized_embeddings(crops, name: str) -> np.ndarray:
    x = np.asarray(crops, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty list of equal-length vectors")
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.argwhere(norms == 0.0)[0][0])
        raise ValueError(f"zero-norm crop embedding at position {bad} of {name}")
    return x / norms[:, None]


def score_trial(crops_a, crops_b, metric: str = "cosine") -> float:
    """Mean pairwise similarity between two sets of crop embeddings.

    ``cosine`` averages the cosine similarities of all pairs; ``sqdist``
    averages the negated squared Euclidean distance between L2-normalized
    embeddings (for models trained with distance objectives), so that higher
    always means "same speaker".
    """
    a = _normalized_embeddings(crops_a, "crops_a")
    b = _normalized_embeddings(crops_b, "crops_b")
    if a.shape[1] != b.shape[1]:
        raise ValueError("crop embedding dimensions differ between sides")
    cos = np.clip(a @ b.T, -1.0, 1.0)
    if metric == "cosine":
        return float(np.mean(cos))
    if metric == "sqdist":
        return float(np.mean(2.0 * cos - 2.0))  # -||a_hat - b_hat||^2
    raise ValueError(f"unknown scoring metric {metric!r}")


def compute_eer(scored: ScoredTrials) -> EvalReport:
    """Threshold sweep with linear interpolation at the FRR/FAR crossing.

    Candidate thresholds are every distinct score plus one virtual point
    above the maximum (all trials rejected).  FRR(t) counts same-speaker
    scores strictly below ``t``; FAR(t) counts different-speaker scores at
    or above ``t``.  FRR - FAR is nondecreasing in ``t``; the EER is read
    at its zero, interpolating linearly between the two adjacent operating
    points when the sweep does not land on the crossing exactly.
    """
    same = scored.scores[scored.targets]
    diff = scored.scores[~scored.targets]
    if same.size < 1 or diff.size < 1:
        raise ValueError("need at least one same-speaker and one different-speaker trial")

    thresholds = np.unique(scored.scores)
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)
    frr = np.array([np.mean(same < t) for t in thresholds])
    far = np.array([np.mean(diff >= t) for t in thresholds])
    gap = frr - far

    i = int(np.argmax(gap >= 0.0))  # first nonnegative; gap[0] is always -1
    if gap[i] == 0.0:
        eer, thr = float(frr[i]), float(thresholds[i])
    else:
        lam = gap[i - 1] / (gap[i - 1] - gap[i])
        eer = float(frr[i - 1] + lam * (frr[i] - frr[i - 1]))
        thr = float(thresholds[i - 1] + lam * (thresholds[i] - thresholds[i - 1]))
    return EvalReport(
        eer=eer,
        threshold=thr,
        n_target=int(same.size),
        n_nontarget=int(diff.size),
        operating_points=np.column_stack([thresholds, frr, far]),
    )


def crop_embeddings(
    u: Utterance,
    params: EmbedderParams,
    crop_len: int,
    num_crops: int = 10,
    normalize: bool = True,
) -> np.ndarray:
    """Embed the evenly spaced crops of one utterance (rows of the result)."""
    crops = ten_crop(u, crop_len, num_crops)
    if normalize:
        crops = [instance_normalize(c) for c in crops]
    return np.stack([embed(c, params)[0] for c in crops])


def evaluate(
    params: EmbedderParams,
    test,
    trials,
    crop_len: int,
    num_crops: int = 10,
    metric: str = "cosine",
    normalize: bool = True,
    cache: bool = True,
) -> EvalReport:
    """Score every trial with multi-crop similarities and compute the EER.

    Per-utterance crop embeddings are computed once and reused across trials
    unless ``cache=False`` (useful only to demonstrate that caching cannot
    change the result).
    """
    trials = list(trials)
    if not trials:
        raise ValueError("empty trial list")
    for tr in trials:
        for h in (tr.handle_a, tr.handle_b):
            if h not in test.utterances:
                raise ValueError(f"trial references unknown utterance handle {h!r}")

    cached: dict[str, np.ndarray] = {}

    def crops_of(handle: str) -> np.ndarray:
        if cache and handle in cached:
            return cached[handle]
        e = crop_embeddings(
            test.utterances[handle], params, crop_len, num_crops, normalize
        )
        if cache:
            cached[handle] = e
        return e

    scores = np.array(
        [score_trial(crops_of(t.handle_a), crops_of(t.handle_b), metric) for t in trials]
    )
    targets = np.array([t.is_same for t in trials], dtype=bool)
    report = compute_eer(ScoredTrials(scores=scores, targets=targets))
    report.metadata = {
        "crop_len": crop_len,
        "num_crops": num_crops,
        "metric": metric,
        "normalize": normalize,
        "trials": len(trials),
    }
    return report
