"""Scikit-learn style front end over the training loop.

``SpeakerEmbedder`` is a transformer: ``fit`` trains the embedding network
on labeled utterances with the chosen objective, ``transform`` maps
utterances to embedding vectors.  Hyperparameters follow the usual
``get_params``/``set_params``/``clone`` contract so the estimator composes
with model selection utilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .network import Utterance, embed, instance_normalize
from .sampling import DatasetIndex, MiningPolicy
from .training import CurriculumSchedule, TrainRunConfig, train
from .validation import check_labels, check_utterance_list

__all__ = ["SpeakerEmbedder"]


class SpeakerEmbedder(BaseEstimator, TransformerMixin):
    """Train a frame-sequence embedder with a speaker-discriminative objective.

    Parameters mirror :class:`spklearn.training.TrainRunConfig`; ``X`` is a
    list of ``T x F`` frame arrays and ``y`` the per-utterance speaker
    labels.  After fitting, ``transform`` returns one embedding row per
    utterance.

    Example
    -------
    >>> emb = SpeakerEmbedder(objective="angular_prototypical", epochs=5)
    >>> emb.fit(frame_arrays, speaker_labels)          # doctest: +SKIP
    >>> vectors = emb.transform(frame_arrays)          # doctest: +SKIP
    """

    def __init__(
        self,
        objective: str = "angular_prototypical",
        margin: float = 0.2,
        scale: float = 30.0,
        n_speakers: int = 30,
        n_utterances: int = 2,
        batch_size=None,
        epochs: int = 20,
        learning_rate: float = 1e-3,
        identity_cap: int = 100,
        hidden_dim: int = 64,
        embedding_dim: int = 64,
        train_segment=30,
        max_steps=None,
        curriculum: CurriculumSchedule | None = None,
        mining: MiningPolicy | None = None,
        normalize_input: bool = True,
        seed: int = 0,
    ):
        self.objective = objective
        self.margin = margin
        self.scale = scale
        self.n_speakers = n_speakers
        self.n_utterances = n_utterances
        self.batch_size = batch_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.identity_cap = identity_cap
        self.hidden_dim = hidden_dim
        self.embedding_dim = embedding_dim
        self.train_segment = train_segment
        self.max_steps = max_steps
        self.curriculum = curriculum
        self.mining = mining
        self.normalize_input = normalize_input
        self.seed = seed

    def _config(self) -> TrainRunConfig:
        kwargs = dict(
            objective=self.objective,
            margin=self.margin,
            scale=self.scale,
            n_speakers=self.n_speakers,
            n_utterances=self.n_utterances,
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            identity_cap=self.identity_cap,
            hidden_dim=self.hidden_dim,
            embedding_dim=self.embedding_dim,
            train_segment=self.train_segment,
            max_steps=self.max_steps,
            curriculum=self.curriculum,
            seed=self.seed,
        )
        if self.mining is not None:
            kwargs["mining"] = self.mining
        return TrainRunConfig(**kwargs)

    def fit(self, X, y):
        """Train the embedder on utterances ``X`` with speaker labels ``y``."""
        utterances = check_utterance_list(X)
        labels = check_labels(y, len(utterances))
        store: dict[str, Utterance] = {}
        speakers: dict[str, list[str]] = {}
        for i, (frames, spk) in enumerate(zip(utterances, labels)):
            handle = f"utt{i:06d}"
            store[handle] = Utterance(frames=frames, speaker=spk)
            speakers.setdefault(spk, []).append(handle)
        index = DatasetIndex(utterances=store, speakers=speakers)

        result = train(self._config(), index)
        self.params_ = result.params
        self.telemetry_ = result.telemetry
        self.head_ = result.head
        self.similarity_ = result.similarity
        self.classes_ = np.array(sorted(speakers))
        self.n_features_in_ = utterances[0].shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        """Embed utterances into ``(n, embedding_dim)`` vectors."""
        if not hasattr(self, "params_"):
            raise NotFittedError("SpeakerEmbedder must be fitted before transform")
        utterances = check_utterance_list(X)
        out = np.empty((len(utterances), self.params_.embedding_dim))
        for i, frames in enumerate(utterances):
            u = Utterance(frames=frames)
            if self.normalize_input:
                u = instance_normalize(u)
            out[i], _ = embed(u, self.params_)
        return out
