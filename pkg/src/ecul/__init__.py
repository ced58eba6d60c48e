"""Unsupervised cross-modal pseudo-labeling and contrastive-memory training
on embedding vectors, evaluated by retrieval metrics at desk scale."""

from .features import (
    INFRARED,
    NO_IDENTITY,
    NO_LABEL,
    NOISE,
    VISIBLE,
    DatasetSplit,
    FeatureFileError,
    FeatureSet,
    load_featureset,
    normalize,
    save_featureset,
)
from .encoding import (
    INTER_MODALITY,
    INTRA_MODALITY,
    EmccParams,
    EncodingVector,
    extend_encoding,
    jaccard_distance,
    k_reciprocal_encoding,
    pairwise_distances,
)
from .clustering import (
    CLUSTER_MODES,
    INTER,
    INTRA_INFRARED,
    INTRA_VISIBLE,
    ClusterAssignment,
    ClusterSchedule,
    assign_pseudo_labels,
    cluster_epoch,
    dbscan,
    mode_distance,
)
from .memory import (
    CLUSTER,
    INSTANCE,
    SCOPE_INFRARED,
    SCOPE_MIXED,
    SCOPE_VISIBLE,
    MemoryBank,
    TsMemSchedule,
    init_memory,
    load_memory,
    momentum_update,
    save_memory,
    tsmem_update,
)
from .aggregation import (
    CrossModalPairing,
    count_priority_select,
    cross_update,
    greedy_pairs,
    same_direction_update,
    vote_matrix,
)
from .losses import (
    PHASE_INTER,
    PHASE_INTRA,
    LossConfig,
    LossReport,
    QueryBatch,
    batch_loss,
    infonce,
)
from .encoder import ToyEncoder, gradient_step
from .metrics import EvalResult, clustering_scores, evaluate
from .synth import SynthSpec, generate
from .trainer import (
    EpochRecord,
    TrainConfig,
    TrainState,
    init_state,
    run_training,
    sample_batch,
    train_epoch,
)
from .ablate import (
    ABLATION_ROWS,
    DIRECTIONAL_ROWS,
    TABLE_ROWS,
    AblationRow,
    run_ablate,
    standard_config,
    standard_spec,
)

__all__ = [name for name in dir() if not name.startswith("_")]
