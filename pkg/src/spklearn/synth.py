"""Deterministic synthetic open-set corpus with disjoint train/test identities.

Every speaker is a unit latent direction in the identity half of the feature
space.  An utterance picks a per-utterance perturbed direction (within-
speaker noise) and emits it as a sequence of frames, each frame an i.i.d.
noisy observation of the direction: a multiplicative per-frame gain, an
utterance-level channel component living in the other half of the feature
space, and additive isotropic noise, all governed by the frame-noise level.

The structure is chosen so the benchmark behaves like open-set speaker
verification rather than a linear-separation toy:

* per-utterance mean/variance normalization wipes out any constant-in-time
  offset, so identity must also ride on how frames co-fluctuate around
  their temporal mean (the lognormal gain supplies that co-fluctuation);
* the channel component points in a random per-utterance direction of a
  fixed identity-free subspace, so an untrained embedder confuses channel
  match with speaker match while a trained one can learn to ignore those
  coordinates;
* with the frame-noise level at zero all jitter vanishes and every frame of
  an utterance collapses to the bare direction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluation import Trial
from .network import Utterance
from .sampling import DatasetIndex

__all__ = [
    "SynthSpec",
    "generate",
    "build_trials",
    "export_corpus",
    "load_corpus",
    "read_trials",
    "write_trials",
]

# Emission constants, all scaled by the frame-noise level so that zero frame
# noise degenerates to constant frames: log-sd of the per-frame identity
# gain, per-frame sd of the channel amplitude, and the constant channel
# offset that leaks the channel direction into the temporal mean.  Channel
# directions come from a small corpus-wide dictionary (a finite set of
# recording conditions), so chance channel matches between unrelated
# utterances are common.
_GAIN_LOG_SD_RATIO = 2.5
_CHANNEL_SD_RATIO = 5.0
_CHANNEL_MEAN_RATIO = 1.5
_CHANNEL_DICTIONARY = 8


@dataclass
class SynthSpec:
    """Shape and noise levels of the generated corpus."""

    train_speakers: int = 50
    test_speakers: int = 20
    utterances_per_speaker: int = 10
    frames_min: int = 20
    frames_max: int = 60
    feature_dim: int = 16
    within_noise: float = 0.1
    frame_noise: float = 0.5
    trial_pairs_per_class: int = 250
    seed: int = 1234

    def __post_init__(self):
        if self.train_speakers < 1 or self.test_speakers < 1:
            raise ValueError("speaker counts must be >= 1")
        if self.utterances_per_speaker < 1:
            raise ValueError("utterances_per_speaker must be >= 1")
        if not 1 <= self.frames_min <= self.frames_max:
            raise ValueError("need 1 <= frames_min <= frames_max")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.within_noise < 0 or self.frame_noise < 0:
            raise ValueError("noise levels must be >= 0")
        if self.trial_pairs_per_class < 1:
            raise ValueError("trial_pairs_per_class must be >= 1")


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _identity_dim(f_dim: int) -> int:
    # 6 of 16 dims by default; channel confusion needs the larger share
    return max(1, round(0.375 * f_dim))


def _channel_dictionary(rng: np.random.Generator, f_dim: int) -> np.ndarray:
    id_dim = _identity_dim(f_dim)
    ch_dim = f_dim - id_dim
    book = np.zeros((max(1, _CHANNEL_DICTIONARY), f_dim))
    if ch_dim > 0:
        for k in range(book.shape[0]):
            book[k, id_dim:] = _unit(rng.standard_normal(ch_dim))
    return book


def _make_split(
    rng: np.random.Generator,
    prefix: str,
    n_speakers: int,
    spec: SynthSpec,
    channel_book: np.ndarray,
) -> DatasetIndex:
    f_dim = spec.feature_dim
    id_dim = _identity_dim(f_dim)
    utterances: dict[str, Utterance] = {}
    speakers: dict[str, list[str]] = {}
    for s in range(n_speakers):
        speaker_id = f"{prefix}{s:04d}"
        direction = np.zeros(f_dim)
        direction[:id_dim] = _unit(rng.standard_normal(id_dim))
        handles = []
        for q in range(spec.utterances_per_speaker):
            utt_dir = direction
            if spec.within_noise > 0:
                utt_dir = np.zeros(f_dim)
                utt_dir[:id_dim] = _unit(
                    direction[:id_dim] + spec.within_noise * rng.standard_normal(id_dim)
                )
            channel = channel_book[int(rng.integers(0, channel_book.shape[0]))]
            t = int(rng.integers(spec.frames_min, spec.frames_max + 1))
            sigma = spec.frame_noise
            gains = np.exp(_GAIN_LOG_SD_RATIO * sigma * rng.standard_normal(t))
            amp = sigma * (
                _CHANNEL_MEAN_RATIO + _CHANNEL_SD_RATIO * rng.standard_normal(t)
            )
            frames = gains[:, None] * utt_dir[None, :] + amp[:, None] * channel[None, :]
            if sigma > 0:
                frames = frames + sigma * rng.standard_normal((t, f_dim))
            handle = f"{speaker_id}_u{q:03d}"
            utterances[handle] = Utterance(frames=frames, speaker=speaker_id)
            handles.append(handle)
        speakers[speaker_id] = handles
    return DatasetIndex(utterances=utterances, speakers=speakers)


def generate(spec: SynthSpec):
    """Build the train split, the disjoint test split, and its trial list.

    The two splits share the channel-condition dictionary (environments are
    not identities) but have no speakers in common.
    """
    rng = np.random.default_rng(spec.seed)
    book = _channel_dictionary(rng, spec.feature_dim)
    train = _make_split(rng, "train_spk", spec.train_speakers, spec, book)
    test = _make_split(rng, "test_spk", spec.test_speakers, spec, book)
    trials = build_trials(test, spec.trial_pairs_per_class, seed=spec.seed + 1)
    return train, test, trials


def build_trials(test: DatasetIndex, pairs_per_class: int, seed: int) -> list[Trial]:
    """Balanced same/different verification pairs, without self-pairs.

    Candidate pairs are enumerated and sampled without replacement, so all
    trials are distinct and the draw replays exactly for a given seed.
    """
    if test.num_speakers < 2:
        raise ValueError("need at least 2 test speakers to form different-speaker trials")
    order = test.speaker_order()
    same_pool = [
        (hs[i], hs[j])
        for spk in order
        for hs in [test.speakers[spk]]
        for i in range(len(hs))
        for j in range(i + 1, len(hs))
    ]
    diff_pool = [
        (ha, hb)
        for ai in range(len(order))
        for bi in range(ai + 1, len(order))
        for ha in test.speakers[order[ai]]
        for hb in test.speakers[order[bi]]
    ]
    if len(same_pool) < pairs_per_class:
        raise ValueError(
            f"insufficient utterances: only {len(same_pool)} same-speaker pairs exist, "
            f"{pairs_per_class} requested"
        )
    if len(diff_pool) < pairs_per_class:
        raise ValueError(
            f"insufficient utterances: only {len(diff_pool)} different-speaker pairs exist, "
            f"{pairs_per_class} requested"
        )
    rng = np.random.default_rng(seed)
    same_idx = rng.choice(len(same_pool), size=pairs_per_class, replace=False)
    diff_idx = rng.choice(len(diff_pool), size=pairs_per_class, replace=False)
    trials = [Trial(*same_pool[int(i)], True) for i in same_idx]
    trials += [Trial(*diff_pool[int(i)], False) for i in diff_idx]
    return trials


# ---------------------------------------------------------------------------
# on-disk corpus layout
# ---------------------------------------------------------------------------

_UTT_MAGIC = b"SPKUTTER"
_UTT_VERSION = 1


def _write_utterance(path: Path, u: Utterance) -> None:
    t, f = u.frames.shape
    with open(path, "wb") as fh:
        fh.write(_UTT_MAGIC + struct.pack("<III", _UTT_VERSION, t, f))
        fh.write(np.ascontiguousarray(u.frames, dtype="<f8").tobytes())


def _read_utterance(path: Path, speaker: str) -> Utterance:
    blob = path.read_bytes()
    if blob[:8] != _UTT_MAGIC:
        raise ValueError(f"{path}: not an utterance file (bad magic)")
    version, t, f = struct.unpack("<III", blob[8:20])
    if version != _UTT_VERSION:
        raise ValueError(f"{path}: unsupported utterance format version {version}")
    expected = 20 + 8 * t * f
    if len(blob) != expected:
        raise ValueError(f"{path}: truncated utterance ({len(blob)} of {expected} bytes)")
    frames = np.frombuffer(blob, dtype="<f8", count=t * f, offset=20).reshape(t, f).copy()
    return Utterance(frames=frames, speaker=speaker)


def write_trials(path, trials) -> None:
    """One line per trial: ``<label> <handleA> <handleB>`` with label 1=same."""
    with open(path, "w") as fh:
        for tr in trials:
            fh.write(f"{int(tr.is_same)} {tr.handle_a} {tr.handle_b}\n")


def read_trials(path) -> list[Trial]:
    trials = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[0] not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: malformed trial line {line.rstrip()!r}")
            trials.append(Trial(parts[1], parts[2], parts[0] == "1"))
    return trials


def export_corpus(outdir, train: DatasetIndex, test: DatasetIndex, trials) -> None:
    """Write one binary file per utterance plus manifest.txt and trials.txt.

    Manifest lines are ``<split> <speaker_id> <handle>``; utterance files
    live at ``utterances/<handle>.bin``.
    """
    out = Path(outdir)
    (out / "utterances").mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.txt", "w") as mf:
        for split, index in (("train", train), ("test", test)):
            for spk in index.speaker_order():
                for handle in index.speakers[spk]:
                    _write_utterance(
                        out / "utterances" / f"{handle}.bin", index.utterances[handle]
                    )
                    mf.write(f"{split} {spk} {handle}\n")
    write_trials(out / "trials.txt", trials)


def load_corpus(corpus_dir):
    """Read back a corpus written by :func:`export_corpus`."""
    root = Path(corpus_dir)
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise ValueError(f"{root}: missing manifest.txt")
    splits: dict[str, tuple[dict, dict]] = {
        "train": ({}, {}),
        "test": ({}, {}),
    }
    with open(manifest) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[0] not in splits:
                raise ValueError(f"{manifest}:{lineno}: malformed manifest line {line.rstrip()!r}")
            split, spk, handle = parts
            utterances, speakers = splits[split]
            utterances[handle] = _read_utterance(root / "utterances" / f"{handle}.bin", spk)
            speakers.setdefault(spk, []).append(handle)
    train = DatasetIndex(utterances=splits["train"][0], speakers=splits["train"][1])
    test = DatasetIndex(utterances=splits["test"][0], speakers=splits["test"][1])
    trials = read_trials(root / "trials.txt")
    return train, test, trials
