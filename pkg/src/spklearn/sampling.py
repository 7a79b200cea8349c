"""Epoch planning, episodic batch formation, and negative-mining policies.

An epoch plan caps how many utterances each identity contributes (to reduce
class imbalance) and fixes a shuffled draw order.  Episodic batches of
``N`` speakers x ``M`` utterances are consumed from the plan until it can no
longer supply a full batch; classification batches are the ``M = 1`` case.
Everything is deterministic given the integer seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import Utterance

__all__ = [
    "DatasetIndex",
    "MiningPolicy",
    "EpochPlan",
    "BatchSkeleton",
    "EpochExhausted",
    "build_epoch_plan",
    "make_episodic_batch",
    "select_negative",
    "derive_seed",
]


class EpochExhausted(Exception):
    """Raised when the remaining plan cannot supply a full batch."""


def derive_seed(*parts: int) -> int:
    """Collision-resistant child seed from a tuple of integers."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class DatasetIndex:
    """Speaker-keyed view of a corpus: handles, frame lengths, raw frames."""

    utterances: dict[str, Utterance]
    speakers: dict[str, list[str]]

    def __post_init__(self):
        if not self.speakers:
            raise ValueError("dataset index has no speakers")
        for spk, handles in self.speakers.items():
            if not handles:
                raise ValueError(f"speaker {spk!r} has no utterances")
            for h in handles:
                if h not in self.utterances:
                    raise ValueError(f"handle {h!r} of speaker {spk!r} is unresolvable")

    @property
    def num_speakers(self) -> int:
        return len(self.speakers)

    @property
    def num_utterances(self) -> int:
        return len(self.utterances)

    def frame_length(self, handle: str) -> int:
        return self.utterances[handle].frames.shape[0]

    def speaker_order(self) -> list[str]:
        return sorted(self.speakers)


@dataclass
class MiningPolicy:
    """How the triplet negative is drawn from the in-batch candidates.

    ``mode`` is one of ``random``, ``hardest``, ``hardest_fraction``; before
    ``activation_epoch`` the effective mode is always ``random`` (curriculum).
    """

    mode: str = "random"
    fraction: float = 0.01
    activation_epoch: int = 0

    def __post_init__(self):
        if self.mode not in ("random", "hardest", "hardest_fraction"):
            raise ValueError(f"unknown mining mode {self.mode!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"mining fraction must be in (0, 1], got {self.fraction}")
        if self.activation_epoch < 0:
            raise ValueError("activation_epoch must be >= 0")

    def effective_mode(self, epoch: int) -> str:
        return "random" if epoch < self.activation_epoch else self.mode


@dataclass
class BatchSkeleton:
    """Utterance handles arranged as ``N`` speakers x ``M`` utterances."""

    speaker_ids: tuple
    handles: tuple  # tuple of N tuples of M handles

    @property
    def n_speakers(self) -> int:
        return len(self.speaker_ids)

    @property
    def n_utterances(self) -> int:
        return len(self.handles[0])

    def flat_handles(self) -> list[str]:
        return [h for row in self.handles for h in row]


class EpochPlan:
    """Shuffled per-epoch draw order with per-speaker remaining queues.

    Iterating (or ``list(plan)``) yields the remaining handles in draw
    order; batch formation consumes handles so that none repeats within an
    epoch.
    """

    def __init__(self, order: list[str], speaker_of: dict[str, str]):
        self._order = list(order)
        self._speaker_of = dict(speaker_of)
        self._consumed: set[str] = set()
        self._remaining: dict[str, list[str]] = {}
        for h in self._order:
            self._remaining.setdefault(self._speaker_of[h], []).append(h)

    def __iter__(self):
        return iter(h for h in self._order if h not in self._consumed)

    def __len__(self) -> int:
        return len(self._order) - len(self._consumed)

    def remaining_counts(self) -> dict[str, int]:
        return {spk: len(hs) for spk, hs in self._remaining.items() if hs}

    def eligible_speakers(self, min_utterances: int) -> list[str]:
        return sorted(
            spk for spk, hs in self._remaining.items() if len(hs) >= min_utterances
        )

    def consume(self, speaker: str, count: int) -> list[str]:
        queue = self._remaining.get(speaker, [])
        if len(queue) < count:
            raise EpochExhausted(
                f"speaker {speaker!r} has only {len(queue)} handles left, need {count}"
            )
        taken, self._remaining[speaker] = queue[:count], queue[count:]
        self._consumed.update(taken)
        return taken


def build_epoch_plan(index: DatasetIndex, cap: int, seed: int) -> EpochPlan:
    """Draw at most ``cap`` utterances per identity, then shuffle the order.

    The per-identity cap counters class imbalance: a speaker with fewer
    utterances contributes all of them, one with more contributes a fresh
    random subset each epoch.
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    if index.num_speakers == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    chosen: list[str] = []
    speaker_of: dict[str, str] = {}
    for spk in index.speaker_order():
        handles = index.speakers[spk]
        take = min(cap, len(handles))
        picked = rng.choice(len(handles), size=take, replace=False)
        for i in picked:
            chosen.append(handles[int(i)])
            speaker_of[handles[int(i)]] = spk
    order = [chosen[int(i)] for i in rng.permutation(len(chosen))]
    return EpochPlan(order, speaker_of)


def make_episodic_batch(plan: EpochPlan, n_speakers: int, m_utterances: int, seed: int) -> BatchSkeleton:
    """Consume ``N`` speakers x ``M`` handles from the plan.

    Raises :class:`EpochExhausted` when fewer than ``N`` speakers still have
    ``M`` handles available; the partial remainder is discarded by callers
    (losses assume a full ``N x M`` grid).
    """
    if n_speakers < 1 or m_utterances < 1:
        raise ValueError("batch shape must be at least 1 x 1")
    eligible = plan.eligible_speakers(m_utterances)
    if len(eligible) < n_speakers:
        raise EpochExhausted(
            f"need {n_speakers} speakers with {m_utterances} utterances, "
            f"only {len(eligible)} eligible"
        )
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(eligible), size=n_speakers, replace=False)
    speakers = [eligible[int(i)] for i in picked]
    rows = tuple(tuple(plan.consume(spk, m_utterances)) for spk in speakers)
    return BatchSkeleton(speaker_ids=tuple(speakers), handles=rows)


def select_negative(
    anchor_index: int,
    candidate_distances,
    policy: MiningPolicy,
    epoch: int,
    seed: int,
) -> int:
    """Pick the negative speaker for one anchor from in-batch distances.

    ``candidate_distances`` lists the anchor-to-candidate distances for the
    ``N - 1`` speakers other than the anchor, in ascending speaker order.
    Returns the chosen speaker's index in the original batch.  Ties are
    broken toward the lowest speaker index so results are reproducible.
    """
    d = np.asarray(candidate_distances, dtype=np.float64)
    if d.ndim != 1 or d.size < 1:
        raise ValueError("need at least one candidate distance")
    if not np.all(np.isfinite(d)):
        raise ValueError("candidate distances contain non-finite entries")

    mode = policy.effective_mode(epoch)
    if mode == "random":
        pos = int(np.random.default_rng(seed).integers(0, d.size))
    elif mode == "hardest":
        pos = int(np.argmin(d))  # first minimum == lowest speaker index
    else:  # hardest_fraction
        pool = max(1, math.ceil(policy.fraction * d.size))
        order = np.argsort(d, kind="stable")
        pos = int(order[np.random.default_rng(seed).integers(0, pool)])
    return pos if pos < anchor_index else pos + 1
