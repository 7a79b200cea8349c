"""Training objectives with forward values and analytic gradients.

Eight objectives are implemented: plain softmax classification, normalized
softmax (NSL), additive cosine margin (AM-Softmax), additive angular margin
(AAM-Softmax), hinge triplet with in-batch negative mining, prototypical,
generalized end-to-end (GE2E), and angular prototypical.

Conventions shared by every objective:

* an episodic batch holds ``N`` speakers x ``M`` utterances of ``D``-dim
  embeddings; classification objectives flatten it to ``N*M`` labeled rows;
* losses are averaged (never summed) over queries/utterances;
* gradients are hand-derived and returned for every input that is learnable:
  the embeddings always, the classifier head for the softmax family, the
  affine similarity scale/bias for GE2E and angular prototypical;
* there is no autodiff: each backward pass below is the closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .sampling import MiningPolicy, select_negative

__all__ = [
    "EmbeddingBatch",
    "ClassifierHead",
    "MarginConfig",
    "AffineSimilarityParams",
    "LossResult",
    "softmax_loss",
    "nsl_loss",
    "am_softmax_loss",
    "aam_softmax_loss",
    "triplet_loss",
    "triplet_negatives",
    "prototypical_loss",
    "ge2e_loss",
    "angular_prototypical_loss",
    "CANONICAL_OBJECTIVES",
    "OBJECTIVE_ORDER",
]

# Table-style report order: classification block first, then metric block.
CANONICAL_OBJECTIVES = (
    "softmax",
    "am_softmax",
    "aam_softmax",
    "triplet",
    "ge2e",
    "prototypical",
    "angular_prototypical",
)

# Full selectable set; "nsl" slots after plain softmax for reporting.
OBJECTIVE_ORDER = (
    "softmax",
    "nsl",
    "am_softmax",
    "aam_softmax",
    "triplet",
    "ge2e",
    "prototypical",
    "angular_prototypical",
)


# ---------------------------------------------------------------------------
# batch and parameter containers
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingBatch:
    """``N x M`` grid of embeddings plus the per-speaker identity labels."""

    embeddings: np.ndarray
    speaker_ids: tuple

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 3:
            raise ValueError(f"embeddings must be (N, M, D), got shape {emb.shape}")
        if min(emb.shape) < 1:
            raise ValueError(f"embeddings must be non-empty, got shape {emb.shape}")
        if not np.all(np.isfinite(emb)):
            raise ValueError("embeddings contain non-finite entries")
        ids = tuple(self.speaker_ids)
        if len(ids) != emb.shape[0]:
            raise ValueError(f"{len(ids)} speaker ids for {emb.shape[0]} speakers")
        if len(set(ids)) != len(ids):
            raise ValueError("speaker ids within a batch must be distinct")
        self.embeddings = emb
        self.speaker_ids = ids

    @property
    def n_speakers(self) -> int:
        return self.embeddings.shape[0]

    @property
    def n_utterances(self) -> int:
        return self.embeddings.shape[1]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[2]


@dataclass
class ClassifierHead:
    """Weights (one row per class) and bias of the classification layer.

    The normalized-softmax family consumes the rows in L2-normalized form and
    ignores the bias entirely; the stored values are unconstrained.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError(f"weights must be (C, D), got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} does not match {w.shape[0]} classes")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("head parameters contain non-finite entries")
        self.weights = w
        self.bias = b

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @staticmethod
    def initialize(n_classes: int, dim: int, rng: np.random.Generator) -> "ClassifierHead":
        bound = math.sqrt(6.0 / (dim + n_classes))
        w = rng.uniform(-bound, bound, size=(n_classes, dim))
        return ClassifierHead(weights=w, bias=np.zeros(n_classes))


@dataclass
class MarginConfig:
    """Margin ``m`` and fixed scale ``s`` for the additive-margin losses."""

    margin: float = 0.2
    scale: float = 30.0

    def __post_init__(self):
        if not (math.isfinite(self.margin) and self.margin >= 0.0):
            raise ValueError(f"margin must be finite and >= 0, got {self.margin}")
        if not (math.isfinite(self.scale) and self.scale > 0.0):
            raise ValueError(f"scale must be finite and > 0, got {self.scale}")


@dataclass
class AffineSimilarityParams:
    """Learnable scale ``w > 0`` and bias ``b`` of the cosine similarity."""

    w: float = 10.0
    b: float = -5.0

    def __post_init__(self):
        if not (math.isfinite(self.w) and self.w > 0.0):
            raise ValueError(f"similarity scale w must be finite and > 0, got {self.w}")
        if not math.isfinite(self.b):
            raise ValueError(f"similarity bias b must be finite, got {self.b}")

    def project(self, floor: float = 1e-6) -> None:
        """Re-impose the ``w > 0`` constraint after an optimizer step."""
        self.w = max(self.w, floor)


@dataclass
class LossResult:
    """Scalar loss plus gradients for every learnable input of the objective.

    ``grad_weights``/``grad_bias`` are set only by the classification family,
    ``grad_w``/``grad_b`` only by GE2E and angular prototypical.
    """

    loss: float
    grad_embeddings: np.ndarray
    grad_weights: np.ndarray | None = None
    grad_bias: np.ndarray | None = None
    grad_w: float | None = None
    grad_b: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.loss):
            raise ValueError(f"loss is non-finite: {self.loss}")
        for name in ("grad_embeddings", "grad_weights", "grad_bias"):
            g = getattr(self, name)
            if g is not None and not np.all(np.isfinite(g)):
                raise ValueError(f"{name} contains non-finite entries")
        for name in ("grad_w", "grad_b"):
            g = getattr(self, name)
            if g is not None and not math.isfinite(g):
                raise ValueError(f"{name} is non-finite: {g}")


# ---------------------------------------------------------------------------
# shared numeric helpers (vectorized counterparts of the scalar kernels)
# ---------------------------------------------------------------------------


def _row_logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))[..., 0]


def _row_softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _safe_norms(x: np.ndarray, describe) -> np.ndarray:
    """Row norms over the last axis; raises naming the first degenerate row."""
    norms = np.linalg.norm(x, axis=-1)
    if np.any(norms == 0.0):
        idx = tuple(np.argwhere(norms == 0.0)[0])
        raise ValueError(f"zero-norm {describe(idx)}")
    return norms


def _flatten_batch(batch: EmbeddingBatch) -> np.ndarray:
    return batch.embeddings.reshape(-1, batch.dim)


def _check_labels(labels, n_rows: int, n_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    y = y.reshape(-1)
    if y.shape[0] != n_rows:
        raise ValueError(f"expected {n_rows} labels, got {y.shape[0]}")
    if y.size and (not np.issubdtype(y.dtype, np.integer)):
        raise ValueError("labels must be integers")
    if np.any(y < 0) or np.any(y >= n_classes):
        bad = int(y[(y < 0) | (y >= n_classes)][0])
        raise ValueError(f"label {bad} out of range for {n_classes} classes")
    return y.astype(np.int64)


# ---------------------------------------------------------------------------
# classification objectives
# ---------------------------------------------------------------------------


def softmax_loss(batch: EmbeddingBatch, labels, head: ClassifierHead) -> LossResult:
    """Mean cross-entropy of affine logits ``W x + b`` over the batch."""
    x = _flatten_batch(batch)
    n = x.shape[0]
    y = _check_labels(labels, n, head.n_classes)

    z = x @ head.weights.T + head.bias
    loss = float(np.mean(_row_logsumexp(z) - z[np.arange(n), y]))

    g = _row_softmax(z)
    g[np.arange(n), y] -= 1.0
    g /= n
    grad_x = g @ head.weights
    return LossResult(
        loss=loss,
        grad_embeddings=grad_x.reshape(batch.embeddings.shape),
        grad_weights=g.T @ x,
        grad_bias=g.sum(axis=0),
    )


def _normalized_margin_core(
    batch: EmbeddingBatch,
    labels,
    head: ClassifierHead,
    margin: float,
    scale: float,
    angular: bool,
) -> LossResult:
    """Shared forward/backward for NSL, AM-Softmax and AAM-Softmax.

    Logits are scaled cosines between L2-normalized embeddings and weight
    rows; the target logit carries the margin penalty (cosine-additive for
    AM, angle-additive for AAM).  Gradients flow through both normalizations.
    """
    if head.n_classes < 2:
        raise ValueError("normalized-softmax losses require at least 2 classes")
    x = _flatten_batch(batch)
    n = x.shape[0]
    y = _check_labels(labels, n, head.n_classes)

    xn = _safe_norms(x, lambda i: f"embedding at batch position {i[0]}")
    wn = _safe_norms(head.weights, lambda i: f"weight row {i[0]}")
    xh = x / xn[:, None]
    wh = head.weights / wn[:, None]
    cos = np.clip(xh @ wh.T, -1.0, 1.0)

    rows = np.arange(n)
    c_t = cos[rows, y]
    if angular:
        cos_m, sin_m = math.cos(margin), math.sin(margin)
        sin_t = np.sqrt(np.maximum(1.0 - c_t * c_t, 0.0))
        # angle-addition branch only while theta + m <= pi; past that point
        # cos(theta + m) stops being monotone in theta, so switch to the
        # linear fallback c - m*sin(m)
        fallback = c_t < -cos_m
        target_logit = np.where(
            fallback, c_t - margin * sin_m, c_t * cos_m - sin_t * sin_m
        )
        dtarget_dcos = np.where(
            fallback, 1.0, cos_m + c_t * sin_m / np.maximum(sin_t, 1e-12)
        )
    else:
        target_logit = c_t - margin
        dtarget_dcos = np.ones(n)

    z = scale * cos
    z[rows, y] = scale * target_logit
    loss = float(np.mean(_row_logsumexp(z) - z[rows, y]))

    u = _row_softmax(z)
    u[rows, y] -= 1.0
    u *= scale / n
    u[rows, y] *= dtarget_dcos

    # d cos(x, w_j) / dx = (w_hat_j - cos * x_hat) / ||x||, and symmetrically
    # for the weight rows
    row_dot = (u * cos).sum(axis=1)
    grad_x = (u @ wh - row_dot[:, None] * xh) / xn[:, None]
    col_dot = (u * cos).sum(axis=0)
    grad_w = (u.T @ xh - col_dot[:, None] * wh) / wn[:, None]

    return LossResult(
        loss=loss,
        grad_embeddings=grad_x.reshape(batch.embeddings.shape),
        grad_weights=grad_w,
        grad_bias=np.zeros(head.n_classes),
    )


def nsl_loss(batch: EmbeddingBatch, labels, head: ClassifierHead) -> LossResult:
    """Normalized softmax: plain cosine logits, no margin, no scale."""
    return _normalized_margin_core(batch, labels, head, margin=0.0, scale=1.0, angular=False)


def am_softmax_loss(
    batch: EmbeddingBatch, labels, head: ClassifierHead, cfg: MarginConfig
) -> LossResult:
    """Additive cosine margin: target logit ``s*(cos - m)``, others ``s*cos``."""
    return _normalized_margin_core(
        batch, labels, head, margin=cfg.margin, scale=cfg.scale, angular=False
    )


def aam_softmax_loss(
    batch: EmbeddingBatch, labels, head: ClassifierHead, cfg: MarginConfig
) -> LossResult:
    """Additive angular margin: target logit ``s*cos(theta + m)``."""
    if not cfg.margin < math.pi / 2:
        raise ValueError(f"angular margin must satisfy m < pi/2, got {cfg.margin}")
    return _normalized_margin_core(
        batch, labels, head, margin=cfg.margin, scale=cfg.scale, angular=True
    )


# ---------------------------------------------------------------------------
# metric objectives
# ---------------------------------------------------------------------------


def _normalize_rows(x: np.ndarray, describe):
    norms = _safe_norms(x, describe)
    return x / norms[..., None], norms


def _backprop_normalization(grad_hat: np.ndarray, xh: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # d(x/||x||) pullback: g -> (g - (x_hat . g) x_hat) / ||x||
    dots = (grad_hat * xh).sum(axis=-1, keepdims=True)
    return (grad_hat - dots * xh) / norms[..., None]


def triplet_negatives(
    batch: EmbeddingBatch, mining: MiningPolicy, epoch: int = 0, seed: int = 0
) -> np.ndarray:
    """Negative speaker index chosen for each anchor, plus nothing else.

    Exposed separately so the mining decision can be inspected and tested
    apart from the loss value.  Distances are squared Euclidean between the
    L2-normalized anchor ``x[j, 0]`` and every other speaker's ``x[k, 1]``.
    """
    n = batch.n_speakers
    if batch.n_utterances != 2:
        raise ValueError("triplet batches require exactly 2 utterances per speaker")
    if n < 2:
        raise ValueError("triplet mining needs at least 2 speakers in the batch")
    xh, _ = _normalize_rows(
        batch.embeddings, lambda i: f"embedding (speaker {i[0]}, utterance {i[1]})"
    )
    anchors, seconds = xh[:, 0], xh[:, 1]
    d2 = ((anchors[:, None, :] - seconds[None, :, :]) ** 2).sum(axis=-1)
    chosen = np.empty(n, dtype=np.int64)
    for j in range(n):
        candidates = np.delete(d2[j], j)
        chosen[j] = select_negative(j, candidates, mining, epoch, seed + j)
    return chosen


def triplet_loss(
    batch: EmbeddingBatch,
    margin: float,
    mining: MiningPolicy,
    epoch: int = 0,
    seed: int = 0,
) -> LossResult:
    """Hinge on squared distances between L2-normalized embeddings.

    Per speaker ``j``: anchor ``x[j,0]``, positive ``x[j,1]``, negative
    ``x[k,1]`` with ``k`` picked by the mining policy.  The hinge
    subgradient at an exactly-zero violation is 0, and gradients flow only
    through the selected triplets (mining is treated as a constant choice).
    """
    n, m_utt = batch.n_speakers, batch.n_utterances
    if m_utt != 2:
        raise ValueError("triplet loss requires exactly 2 utterances per speaker")
    if n < 2:
        raise ValueError("triplet loss needs at least 2 speakers (no negative available)")
    xh, norms = _normalize_rows(
        batch.embeddings, lambda i: f"embedding (speaker {i[0]}, utterance {i[1]})"
    )
    negatives = triplet_negatives(batch, mining, epoch=epoch, seed=seed)

    anchors, positives = xh[:, 0], xh[:, 1]
    negs = xh[negatives, 1]
    d2_pos = ((anchors - positives) ** 2).sum(axis=1)
    d2_neg = ((anchors - negs) ** 2).sum(axis=1)
    violation = d2_pos - d2_neg + margin
    active = violation > 0.0
    loss = float(np.mean(np.where(active, violation, 0.0)))

    grad_hat = np.zeros_like(xh)
    coef = active.astype(np.float64) / n
    grad_hat[:, 0] = (2.0 * coef)[:, None] * (negs - positives)
    grad_hat[:, 1] = (-2.0 * coef)[:, None] * (anchors - positives)
    np.add.at(grad_hat[:, 1], negatives, (2.0 * coef)[:, None] * (anchors - negs))

    return LossResult(
        loss=loss,
        grad_embeddings=_backprop_normalization(grad_hat, xh, norms),
    )


def _support_query_split(batch: EmbeddingBatch):
    if batch.n_utterances < 2:
        raise ValueError("prototypical-style losses need at least 2 utterances per speaker")
    support = batch.embeddings[:, :-1, :]
    query = batch.embeddings[:, -1, :]
    return support, query


def prototypical_loss(batch: EmbeddingBatch) -> LossResult:
    """Softmax over negative squared distances from queries to centroids.

    The last utterance of every speaker is the query; the centroid of the
    remaining utterances is the speaker's prototype.  The logit for (query
    j, centroid k) is the negative squared Euclidean distance, so that the
    softmax prefers the closest prototype.
    """
    support, query = _support_query_split(batch)
    n, m_sup = support.shape[0], support.shape[1]
    centroids = support.mean(axis=1)

    diff = query[:, None, :] - centroids[None, :, :]
    logits = -(diff**2).sum(axis=-1)
    rows = np.arange(n)
    loss = float(np.mean(_row_logsumexp(logits) - logits[rows, rows]))

    g = _row_softmax(logits)
    g[rows, rows] -= 1.0
    g /= n
    grad_query = -2.0 * (g[:, :, None] * diff).sum(axis=1)
    grad_centroids = 2.0 * (g[:, :, None] * diff).sum(axis=0)

    grad = np.zeros_like(batch.embeddings)
    grad[:, -1, :] = grad_query
    grad[:, :-1, :] = grad_centroids[:, None, :] / m_sup
    return LossResult(loss=loss, grad_embeddings=grad)


def angular_prototypical_loss(
    batch: EmbeddingBatch, params: AffineSimilarityParams
) -> LossResult:
    """Prototypical batch formation with an affine cosine similarity.

    Logits are ``w * cos(query_j, centroid_k) + b`` with learnable ``w > 0``
    and ``b``; the objective is the same softmax cross-entropy as the
    prototypical loss, which makes the value invariant to uniform positive
    scaling of the embeddings.
    """
    if batch.n_speakers < 2:
        raise ValueError("angular prototypical loss needs at least 2 speakers")
    support, query = _support_query_split(batch)
    n, m_sup = support.shape[0], support.shape[1]
    centroids = support.mean(axis=1)

    qh, q_norms = _normalize_rows(query, lambda i: f"query of speaker {i[0]}")
    ch, c_norms = _normalize_rows(centroids, lambda i: f"centroid of speaker {i[0]}")
    cos = np.clip(qh @ ch.T, -1.0, 1.0)

    z = params.w * cos + params.b
    rows = np.arange(n)
    loss = float(np.mean(_row_logsumexp(z) - z[rows, rows]))

    u0 = _row_softmax(z)
    u0[rows, rows] -= 1.0
    u0 /= n
    grad_w = float((u0 * cos).sum())
    grad_b = float(u0.sum())

    u = params.w * u0
    row_dot = (u * cos).sum(axis=1)
    grad_query = (u @ ch - row_dot[:, None] * qh) / q_norms[:, None]
    col_dot = (u * cos).sum(axis=0)
    grad_centroids = (u.T @ qh - col_dot[:, None] * ch) / c_norms[:, None]

    grad = np.zeros_like(batch.embeddings)
    grad[:, -1, :] = grad_query
    grad[:, :-1, :] = grad_centroids[:, None, :] / m_sup
    return LossResult(loss=loss, grad_embeddings=grad, grad_w=grad_w, grad_b=grad_b)


def ge2e_loss(batch: EmbeddingBatch, params: AffineSimilarityParams) -> LossResult:
    """Generalized end-to-end loss: every utterance is a query.

    The similarity of a query to its own speaker uses the exclusive centroid
    (all of the speaker's utterances except the query itself); similarities
    to other speakers use their full centroids.  Logits are
    ``w * cos + b``; the loss is the mean softmax cross-entropy over all
    ``N*M`` queries.
    """
    n, m_utt, d = batch.embeddings.shape
    if n < 2:
        raise ValueError("GE2E loss needs at least 2 speakers")
    if m_utt < 2:
        raise ValueError("GE2E loss needs at least 2 utterances per speaker")
    x = batch.embeddings

    xh, x_norms = _normalize_rows(
        x, lambda i: f"embedding (speaker {i[0]}, utterance {i[1]})"
    )
    full = x.mean(axis=1)
    excl = (x.sum(axis=1, keepdims=True) - x) / (m_utt - 1)
    fh, f_norms = _normalize_rows(full, lambda i: f"centroid of speaker {i[0]}")
    eh, e_norms = _normalize_rows(
        excl, lambda i: f"exclusive centroid (speaker {i[0]}, utterance {i[1]})"
    )

    cos = np.clip(np.einsum("jid,kd->jik", xh, fh), -1.0, 1.0)
    own = np.clip((xh * eh).sum(axis=-1), -1.0, 1.0)
    spk = np.arange(n)
    cos[spk, :, spk] = own

    z = params.w * cos + params.b
    lse = _row_logsumexp(z)
    # z[spk, :, spk] is the (N, M) grid of own-speaker logits z[j, i, j]
    loss = float(np.mean(lse - z[spk, :, spk]))

    u0 = _row_softmax(z)
    u0[spk, :, spk] -= 1.0
    u0 /= n * m_utt
    grad_w = float((u0 * cos).sum())
    grad_b = float(u0.sum())
    u = params.w * u0

    # query side: d cos / d x_ji through the x normalization
    term1 = np.einsum("jik,kd->jid", u, fh)
    u_own = u[spk, :, spk][..., None]  # (N, M, 1), gradient of the own logit
    term1 += u_own * (eh - fh[:, None, :])
    row_dot = (u * cos).sum(axis=-1, keepdims=True)
    grad_x = (term1 - row_dot * xh) / x_norms[..., None]

    # full-centroid side; own-speaker entries use the exclusive centroid, so
    # mask them out before accumulating
    u_full = u.copy()
    u_full[spk, :, spk] = 0.0
    a = np.einsum("jik,jid->kd", u_full, xh)
    coef = np.einsum("jik,jik->k", u_full, cos)
    grad_full = (a - coef[:, None] * fh) / f_norms[:, None]
    grad_x += grad_full[:, None, :] / m_utt

    # exclusive-centroid side: distribute to every utterance except the query
    grad_excl = (u_own * (xh - own[..., None] * eh)) / e_norms[..., None]
    total = grad_excl.sum(axis=1, keepdims=True)
    grad_x += (total - grad_excl) / (m_utt - 1)

    return LossResult(loss=loss, grad_embeddings=grad_x, grad_w=grad_w, grad_b=grad_b)
