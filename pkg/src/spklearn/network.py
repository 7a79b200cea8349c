"""Feed-forward utterance embedder with manual backprop and Adam.

The embedder maps a ``T x F`` frame sequence to a ``D``-dim embedding: each
frame passes through a two-layer MLP (ReLU between the affine maps) and the
frame embeddings are averaged over time (temporal average pooling), so the
output is invariant to frame order and defined for any ``T >= 1``.

Inputs are expected to be mean/variance normalized per utterance (see
:func:`instance_normalize`); gradients are exact reverse-mode derivatives of
the forward computation, written out by hand.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Utterance",
    "EmbedderParams",
    "EmbedderGrads",
    "EmbedCache",
    "OptimizerState",
    "TrainingDiverged",
    "instance_normalize",
    "init_embedder",
    "embed",
    "backward",
    "init_optimizer",
    "adam_step",
    "schedule_lr",
    "save_checkpoint",
    "load_checkpoint",
]

_MVN_STABILIZER = 1e-5


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss or gradient reaches the optimizer."""


@dataclass
class Utterance:
    """A ``T x F`` grid of frame features with its speaker label."""

    frames: np.ndarray
    speaker: str = ""

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
            raise ValueError(f"frames must be a non-empty T x F grid, got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("frames contain non-finite entries")
        self.frames = f

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]


def instance_normalize(u: Utterance) -> Utterance:
    """Per-feature standardization over the temporal axis.

    Subtracts the temporal mean and divides by the temporal standard
    deviation plus a 1e-5 stabilizer, so constant features map to zero
    instead of dividing by zero.
    """
    mu = u.frames.mean(axis=0)
    sd = u.frames.std(axis=0)
    return Utterance(frames=(u.frames - mu) / (sd + _MVN_STABILIZER), speaker=u.speaker)


@dataclass
class EmbedderParams:
    """Two affine layers ``F -> H -> D`` with a ReLU between them.

    ``revision`` increments on every optimizer update; forward caches record
    it so a backward pass against stale activations is rejected.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    revision: int = 0

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        h, f = self.w1.shape
        d, h2 = self.w2.shape
        if h2 != h or self.b1.shape != (h,) or self.b2.shape != (d,):
            raise ValueError("inconsistent embedder parameter shapes")
        for arr in (self.w1, self.b1, self.w2, self.b2):
            if not np.all(np.isfinite(arr)):
                raise ValueError("embedder parameters contain non-finite entries")

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.w2.shape[0]

    def param_list(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "EmbedderParams":
        return EmbedderParams(
            self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(), self.revision
        )


@dataclass
class EmbedderGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def param_list(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def add_(self, other: "EmbedderGrads") -> "EmbedderGrads":
        self.w1 += other.w1
        self.b1 += other.b1
        self.w2 += other.w2
        self.b2 += other.b2
        return self

    @staticmethod
    def zeros_like(p: EmbedderParams) -> "EmbedderGrads":
        return EmbedderGrads(
            np.zeros_like(p.w1), np.zeros_like(p.b1),
            np.zeros_like(p.w2), np.zeros_like(p.b2),
        )


@dataclass
class EmbedCache:
    """Activations saved by the forward pass for the exact backward pass."""

    frames: np.ndarray
    relu_mask: np.ndarray
    hidden: np.ndarray
    params: EmbedderParams
    revision: int


def init_embedder(
    feature_dim: int, hidden_dim: int, embedding_dim: int, seed: int
) -> EmbedderParams:
    """Uniform Glorot initialization, zero biases."""
    rng = np.random.default_rng(seed)

    def layer(fan_out, fan_in):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_out, fan_in))

    return EmbedderParams(
        w1=layer(hidden_dim, feature_dim),
        b1=np.zeros(hidden_dim),
        w2=layer(embedding_dim, hidden_dim),
        b2=np.zeros(embedding_dim),
    )


def embed(u: Utterance, p: EmbedderParams) -> tuple[np.ndarray, EmbedCache]:
    """Per-frame MLP followed by the temporal mean of frame embeddings."""
    if u.feature_dim != p.feature_dim:
        raise ValueError(
            f"utterance has {u.feature_dim} features, embedder expects {p.feature_dim}"
        )
    z1 = u.frames @ p.w1.T + p.b1
    mask = z1 > 0.0
    hidden = np.where(mask, z1, 0.0)
    frame_emb = hidden @ p.w2.T + p.b2
    embedding = frame_emb.mean(axis=0)
    cache = EmbedCache(
        frames=u.frames, relu_mask=mask, hidden=hidden, params=p, revision=p.revision
    )
    return embedding, cache


def backward(grad_embedding: np.ndarray, cache: EmbedCache) -> tuple[EmbedderGrads, np.ndarray]:
    """Reverse-mode gradients of :func:`embed` w.r.t. parameters and input.

    The upstream gradient of the pooled embedding spreads uniformly over
    frames (mean pooling), so the per-frame second-layer gradient is the
    same vector scaled by ``1/T``.
    """
    p = cache.params
    if cache.revision != p.revision:
        raise ValueError(
            "stale cache: parameters were updated after the forward pass"
        )
    g = np.asarray(grad_embedding, dtype=np.float64)
    if g.shape != (p.embedding_dim,):
        raise ValueError(f"gradient shape {g.shape} does not match embedding dim")
    t = cache.frames.shape[0]

    g_frame = g / t
    grad_w2 = np.outer(g_frame, cache.hidden.sum(axis=0))
    grad_b2 = g.copy()
    g_hidden = g_frame @ p.w2  # identical for every frame before the ReLU mask
    g_z1 = cache.relu_mask * g_hidden
    grad_w1 = g_z1.T @ cache.frames
    grad_b1 = g_z1.sum(axis=0)
    grad_input = g_z1 @ p.w1
    return EmbedderGrads(w1=grad_w1, b1=grad_b1, w2=grad_w2, b2=grad_b2), grad_input


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """Adam moments for one flat list of parameter arrays."""

    lr: float
    step: int
    m: list
    v: list
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optimizer(params: list[np.ndarray], lr: float) -> OptimizerState:
    if lr <= 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    return OptimizerState(
        lr=lr,
        step=0,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def adam_step(
    state: OptimizerState, params: list[np.ndarray], grads: list[np.ndarray]
) -> tuple[list[np.ndarray], OptimizerState]:
    """One bias-corrected Adam update, in place.

    Raises :class:`TrainingDiverged` on any non-finite gradient so the
    training loop can abort with context instead of silently corrupting the
    parameters.
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("parameter/gradient/state lengths differ")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged("non-finite gradient reached the optimizer")

    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def schedule_lr(epoch: int, base: float) -> float:
    """Stepwise decay: 5% off every 10 epochs."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return base * 0.95 ** (epoch // 10)


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

_MAGIC = b"SPKEMBED"
_FORMAT_VERSION = 1


def save_checkpoint(path, p: EmbedderParams) -> None:
    """Flat binary layout: magic, format version, dims, row-major doubles.

    Header: 8 magic bytes ``SPKEMBED``, then four little-endian uint32s
    (format version, F, H, D).  Payload: w1 (H*F), b1 (H), w2 (D*H), b2 (D)
    as little-endian float64 in row-major order.
    """
    header = _MAGIC + struct.pack(
        "<IIII", _FORMAT_VERSION, p.feature_dim, p.hidden_dim, p.embedding_dim
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in p.param_list():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> EmbedderParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise ValueError(f"{path}: not an embedder checkpoint (bad magic)")
    version, f, h, d = struct.unpack("<IIII", blob[8:24])
    if version != _FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    counts = [h * f, h, d * h, d]
    expected = 24 + 8 * sum(counts)
    if len(blob) != expected:
        raise ValueError(f"{path}: truncated checkpoint ({len(blob)} of {expected} bytes)")
    offset = 24
    arrays = []
    for cnt in counts:
        arrays.append(np.frombuffer(blob, dtype="<f8", count=cnt, offset=offset).copy())
        offset += 8 * cnt
    return EmbedderParams(
        w1=arrays[0].reshape(h, f),
        b1=arrays[1],
        w2=arrays[2].reshape(d, h),
        b2=arrays[3],
    )
