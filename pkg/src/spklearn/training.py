"""Training loop binding the sampler, the embedder, and one objective.

A run is deterministic given its config: every random draw (epoch plans,
batch composition, train-time segment starts, mining) uses a seed derived
from the config seed and the loop indices.  The per-epoch telemetry records
mean loss, learning rate, the margin in effect (margin curriculum), the
mining mode in effect (hard-negative curriculum), and the wall-clock time;
everything except the wall-clock replays bit-identically.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .evaluation import evaluate
from .losses import (
    OBJECTIVE_ORDER,
    AffineSimilarityParams,
    ClassifierHead,
    EmbeddingBatch,
    MarginConfig,
    aam_softmax_loss,
    am_softmax_loss,
    angular_prototypical_loss,
    ge2e_loss,
    nsl_loss,
    prototypical_loss,
    softmax_loss,
    triplet_loss,
)
from .network import (
    EmbedderGrads,
    EmbedderParams,
    TrainingDiverged,
    Utterance,
    adam_step,
    backward,
    embed,
    init_embedder,
    init_optimizer,
    instance_normalize,
    schedule_lr,
)
from .sampling import (
    DatasetIndex,
    EpochExhausted,
    MiningPolicy,
    build_epoch_plan,
    derive_seed,
    make_episodic_batch,
)

__all__ = [
    "CurriculumSchedule",
    "TrainRunConfig",
    "EpochRecord",
    "TrainTelemetry",
    "TrainResult",
    "SweepRow",
    "effective_margin",
    "train",
    "train_sweep",
    "CLASSIFICATION_OBJECTIVES",
    "METRIC_OBJECTIVES",
]

CLASSIFICATION_OBJECTIVES = ("softmax", "nsl", "am_softmax", "aam_softmax")
METRIC_OBJECTIVES = ("triplet", "ge2e", "prototypical", "angular_prototypical")

# seed-derivation tags so unrelated draws never share a stream
_TAG_EMBEDDER, _TAG_HEAD, _TAG_PLAN, _TAG_BATCH, _TAG_SEGMENT, _TAG_MINING = range(6)


@dataclass
class CurriculumSchedule:
    """Step change of the angular margin at a fixed epoch."""

    start_margin: float = 0.1
    final_margin: float = 0.3
    switch_epoch: int = 100

    def __post_init__(self):
        if not 0.0 <= self.start_margin <= self.final_margin < math.pi / 2:
            raise ValueError("need 0 <= start_margin <= final_margin < pi/2")
        if self.switch_epoch < 0:
            raise ValueError("switch_epoch must be >= 0")


def effective_margin(schedule: CurriculumSchedule, epoch: int) -> float:
    """Margin in effect at ``epoch``: the start value strictly before the
    switch epoch, the final value from the switch epoch onward."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return schedule.start_margin if epoch < schedule.switch_epoch else schedule.final_margin


@dataclass
class TrainRunConfig:
    """One training run: objective, its hyperparameters, and loop shape.

    Metric objectives consume episodic ``n_speakers x n_utterances`` batches;
    classification objectives consume ``batch_size`` utterances of distinct
    speakers (``batch_size`` defaults to ``n_speakers``).  ``train_segment``
    crops a random fixed-length window from each utterance per visit (the
    only train-time randomness besides sampling); ``max_steps`` stops the
    run after that many optimizer updates regardless of epochs.
    """

    objective: str = "angular_prototypical"
    margin: float = 0.2
    scale: float = 30.0
    n_speakers: int = 30
    n_utterances: int = 2
    batch_size: int | None = None
    epochs: int = 20
    seed: int = 0
    learning_rate: float = 1e-3
    identity_cap: int = 100
    hidden_dim: int = 64
    embedding_dim: int = 64
    train_segment: int | None = 30
    curriculum: CurriculumSchedule | None = None
    mining: MiningPolicy = field(default_factory=MiningPolicy)
    max_steps: int | None = None

    def __post_init__(self):
        if self.objective not in OBJECTIVE_ORDER:
            raise ValueError(
                f"unknown objective {self.objective!r}; expected one of {OBJECTIVE_ORDER}"
            )
        if self.objective == "triplet" and self.n_utterances != 2:
            raise ValueError("the triplet objective requires n_utterances == 2")
        if self.objective in METRIC_OBJECTIVES and self.n_utterances < 2:
            raise ValueError(f"{self.objective} requires n_utterances >= 2")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.identity_cap < 1:
            raise ValueError("identity_cap must be >= 1")
        if self.train_segment is not None and self.train_segment < 1:
            raise ValueError("train_segment must be >= 1 or None")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1 or None")

    @property
    def effective_batch_size(self) -> int:
        return self.batch_size if self.batch_size is not None else self.n_speakers

    def hyperparameter_summary(self) -> dict:
        """Hyperparameters that identify a sweep cell, per objective family."""
        if self.objective in ("am_softmax", "aam_softmax"):
            return {"margin": self.margin, "scale": self.scale}
        if self.objective == "triplet":
            return {"margin": self.margin}
        if self.objective in ("ge2e", "prototypical", "angular_prototypical"):
            return {"n_utterances": self.n_utterances, "n_speakers": self.n_speakers}
        return {}


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    learning_rate: float
    margin: float  # NaN when the objective has no margin
    mining: str  # "-" when the objective does not mine negatives
    seconds: float


@dataclass
class TrainTelemetry:
    """Per-epoch records; one line per completed epoch in the text format."""

    records: list = field(default_factory=list)

    HEADER = "# epoch mean_loss learning_rate margin mining seconds"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.HEADER + "\n")
            for r in self.records:
                margin = "-" if math.isnan(r.margin) else f"{r.margin:.17g}"
                fh.write(
                    f"{r.epoch} {r.mean_loss:.17g} {r.learning_rate:.17g} "
                    f"{margin} {r.mining} {r.seconds:.6f}\n"
                )

    @classmethod
    def read(cls, path) -> "TrainTelemetry":
        records = []
        with open(path) as fh:
            for line in fh:
                if not line.strip() or line.startswith("#"):
                    continue
                epoch, loss, lr, margin, mining, seconds = line.split()
                records.append(
                    EpochRecord(
                        epoch=int(epoch),
                        mean_loss=float(loss),
                        learning_rate=float(lr),
                        margin=float("nan") if margin == "-" else float(margin),
                        mining=mining,
                        seconds=float(seconds),
                    )
                )
        return cls(records=records)


@dataclass
class TrainResult:
    params: EmbedderParams
    telemetry: TrainTelemetry
    head: ClassifierHead | None
    similarity: AffineSimilarityParams | None
    config: TrainRunConfig
    steps: int
    class_of_speaker: dict | None = None


def _feature_dim(data: DatasetIndex) -> int:
    first = next(iter(data.utterances.values()))
    return first.feature_dim


def _segment(u: Utterance, length: int | None, rng: np.random.Generator) -> Utterance:
    if length is None:
        return u
    t = u.num_frames
    keep = min(length, t)
    start = int(rng.integers(0, t - keep + 1))
    return Utterance(frames=u.frames[start : start + keep], speaker=u.speaker)


def train(config: TrainRunConfig, data: DatasetIndex) -> TrainResult:
    """Run the full loop and return the embedder, telemetry and loss params.

    Raises :class:`TrainingDiverged` naming the objective, epoch, and step
    if a non-finite loss or gradient appears.
    """
    obj = config.objective
    classification = obj in CLASSIFICATION_OBJECTIVES
    f_dim = _feature_dim(data)

    params = init_embedder(
        f_dim, config.hidden_dim, config.embedding_dim,
        seed=derive_seed(config.seed, _TAG_EMBEDDER),
    )
    opt_params = params.param_list()

    head = None
    similarity = None
    class_of_speaker = None
    sim_arrays: list[np.ndarray] = []
    if classification:
        speakers = data.speaker_order()
        class_of_speaker = {s: i for i, s in enumerate(speakers)}
        head = ClassifierHead.initialize(
            len(speakers), config.embedding_dim,
            np.random.default_rng(derive_seed(config.seed, _TAG_HEAD)),
        )
        opt_params = opt_params + [head.weights, head.bias]
    elif obj in ("ge2e", "angular_prototypical"):
        similarity = AffineSimilarityParams()
        sim_arrays = [np.array(similarity.w), np.array(similarity.b)]
        opt_params = opt_params + sim_arrays

    optimizer = init_optimizer(opt_params, lr=config.learning_rate)
    telemetry = TrainTelemetry()
    batch_n = config.effective_batch_size if classification else config.n_speakers
    batch_m = 1 if classification else config.n_utterances
    step = 0

    def margin_at(epoch: int) -> float:
        if obj == "aam_softmax" and config.curriculum is not None:
            return effective_margin(config.curriculum, epoch)
        if obj in ("am_softmax", "aam_softmax", "triplet"):
            return config.margin
        return float("nan")

    for epoch in range(config.epochs):
        tic = time.perf_counter()
        optimizer.lr = schedule_lr(epoch, config.learning_rate)
        margin = margin_at(epoch)
        mining_mode = config.mining.effective_mode(epoch) if obj == "triplet" else "-"
        plan = build_epoch_plan(
            data, config.identity_cap, seed=derive_seed(config.seed, _TAG_PLAN, epoch)
        )
        epoch_losses = []
        batch_index = 0
        while config.max_steps is None or step < config.max_steps:
            try:
                skeleton = make_episodic_batch(
                    plan, batch_n, batch_m,
                    seed=derive_seed(config.seed, _TAG_BATCH, epoch, batch_index),
                )
            except EpochExhausted:
                break
            seg_rng = np.random.default_rng(
                derive_seed(config.seed, _TAG_SEGMENT, epoch, batch_index)
            )
            embeddings = np.empty((batch_n, batch_m, config.embedding_dim))
            caches = [[None] * batch_m for _ in range(batch_n)]
            for j, row in enumerate(skeleton.handles):
                for i, handle in enumerate(row):
                    u = _segment(data.utterances[handle], config.train_segment, seg_rng)
                    embeddings[j, i], caches[j][i] = embed(instance_normalize(u), params)

            try:
                batch = EmbeddingBatch(embeddings, skeleton.speaker_ids)
                if classification:
                    labels = np.array([class_of_speaker[s] for s in skeleton.speaker_ids])
                    if obj == "softmax":
                        result = softmax_loss(batch, labels, head)
                    elif obj == "nsl":
                        result = nsl_loss(batch, labels, head)
                    else:
                        mcfg = MarginConfig(margin=margin, scale=config.scale)
                        if obj == "am_softmax":
                            result = am_softmax_loss(batch, labels, head, mcfg)
                        else:
                            result = aam_softmax_loss(batch, labels, head, mcfg)
                elif obj == "triplet":
                    result = triplet_loss(
                        batch, config.margin, config.mining, epoch=epoch,
                        seed=derive_seed(config.seed, _TAG_MINING, epoch, batch_index),
                    )
                elif obj == "prototypical":
                    result = prototypical_loss(batch)
                elif obj == "ge2e":
                    result = ge2e_loss(batch, similarity)
                else:
                    result = angular_prototypical_loss(batch, similarity)

                grads = EmbedderGrads.zeros_like(params)
                for j in range(batch_n):
                    for i in range(batch_m):
                        gj, _ = backward(result.grad_embeddings[j, i], caches[j][i])
                        grads.add_(gj)
                grad_list = grads.param_list()
                if classification:
                    grad_list = grad_list + [result.grad_weights, result.grad_bias]
                elif similarity is not None:
                    grad_list = grad_list + [
                        np.array(result.grad_w), np.array(result.grad_b)
                    ]
                adam_step(optimizer, opt_params, grad_list)
            except (TrainingDiverged, ValueError) as exc:
                raise TrainingDiverged(
                    f"objective {obj!r} diverged at epoch {epoch}, step {step}: {exc}"
                ) from exc

            params.revision += 1
            if similarity is not None:
                similarity.w = float(sim_arrays[0])
                similarity.b = float(sim_arrays[1])
                similarity.project()
                sim_arrays[0][...] = similarity.w
            epoch_losses.append(result.loss)
            step += 1
            batch_index += 1

        if not epoch_losses and config.epochs > 0 and (
            config.max_steps is None or step < config.max_steps
        ):
            raise ValueError(
                f"config cannot form a single {batch_n} x {batch_m} batch from the dataset"
            )
        telemetry.records.append(
            EpochRecord(
                epoch=epoch,
                mean_loss=float(np.mean(epoch_losses)) if epoch_losses else float("nan"),
                learning_rate=optimizer.lr,
                margin=margin,
                mining=mining_mode,
                seconds=time.perf_counter() - tic,
            )
        )
        if config.max_steps is not None and step >= config.max_steps:
            break

    return TrainResult(
        params=params,
        telemetry=telemetry,
        head=head,
        similarity=similarity,
        config=config,
        steps=step,
        class_of_speaker=class_of_speaker,
    )


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepRow:
    """Result of one sweep cell: per-repeat EERs and their statistics."""

    config: TrainRunConfig
    eers: list
    mean_eer: float
    std_eer: float
    error: str | None = None

    @property
    def objective(self) -> str:
        return self.config.objective


def _objective_rank(name: str) -> int:
    return OBJECTIVE_ORDER.index(name)


def _cell_sort_key(config: TrainRunConfig):
    return (
        _objective_rank(config.objective),
        config.margin,
        config.scale,
        config.n_utterances,
        config.n_speakers,
    )


def _run_cell(args) -> SweepRow:
    config, repeats, train_index, test_index, trials, eval_kwargs = args
    eers: list[float] = []
    error = None
    for r in range(repeats):
        run_cfg = replace(config, seed=config.seed + r)
        try:
            result = train(run_cfg, train_index)
            report = evaluate(result.params, test_index, trials, **eval_kwargs)
            eers.append(report.eer)
        except (TrainingDiverged, ValueError) as exc:
            error = f"repeat {r}: {exc}"
            break
    if eers:
        mean = float(np.mean(eers))
        std = float(np.std(eers))  # population std over repeats
    else:
        mean = float("nan")
        std = float("nan")
    return SweepRow(config=config, eers=eers, mean_eer=mean, std_eer=std, error=error)


def train_sweep(
    cells,
    train_index: DatasetIndex,
    test_index: DatasetIndex,
    trials,
    repeats: int = 3,
    crop_len: int = 30,
    num_crops: int = 10,
    metric: str = "cosine",
    jobs: int = 1,
) -> list[SweepRow]:
    """Train and evaluate a grid of configs, ``repeats`` times per cell.

    Repeat ``r`` of a cell uses ``seed + r`` so cells are independent yet
    reproducible.  A diverging cell is recorded with its error and the sweep
    continues.  Rows come back sorted by objective (report block order),
    then hyperparameters.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    ordered = sorted(cells, key=_cell_sort_key)
    eval_kwargs = {"crop_len": crop_len, "num_crops": num_crops, "metric": metric}
    tasks = [
        (cfg, repeats, train_index, test_index, list(trials), eval_kwargs)
        for cfg in ordered
    ]
    if jobs <= 1 or len(tasks) <= 1:
        return [_run_cell(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell, tasks))
