"""Speaker-embedding objectives, episodic sampling, and open-set evaluation."""

from .estimator import SpeakerEmbedder
from .evaluation import EvalReport, ScoredTrials, Trial, compute_eer, evaluate, score_trial, ten_crop
from .losses import (
    AffineSimilarityParams,
    ClassifierHead,
    EmbeddingBatch,
    LossResult,
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
    EmbedderParams,
    OptimizerState,
    Utterance,
    adam_step,
    backward,
    embed,
    init_embedder,
    init_optimizer,
    instance_normalize,
    load_checkpoint,
    save_checkpoint,
    schedule_lr,
)
from .sampling import (
    BatchSkeleton,
    DatasetIndex,
    EpochExhausted,
    MiningPolicy,
    build_epoch_plan,
    make_episodic_batch,
    select_negative,
)
from .synth import SynthSpec, build_trials, export_corpus, generate, load_corpus
from .training import (
    CurriculumSchedule,
    TrainRunConfig,
    TrainTelemetry,
    effective_margin,
    train,
    train_sweep,
)

__version__ = "0.1.0"
