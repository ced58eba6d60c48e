"""Per-epoch training loop: cluster, build memories, optimize, aggregate.

Every epoch re-clusters the current embeddings, rebuilds all memory banks
from scratch (pseudo-labels change identity across epochs), runs the
intra-modality phase, aggregates paired cross-modal memories, then runs the
inter-modality phase. The whole loop is deterministic for a fixed seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .aggregation import CrossModalPairing, count_priority_select, cross_update, same_direction_update
from .clustering import (
    INTER,
    INTRA_INFRARED,
    INTRA_VISIBLE,
    ClusterAssignment,
    ClusterSchedule,
    cluster_epoch,
)
from .encoder import ToyEncoder, gradient_step
from .features import INFRARED, NO_LABEL, VISIBLE, DatasetSplit, FeatureSet
from .losses import PHASE_INTER, PHASE_INTRA, LossConfig, QueryBatch, batch_loss
from .memory import (
    CLUSTER,
    INSTANCE,
    SCOPE_INFRARED,
    SCOPE_MIXED,
    SCOPE_VISIBLE,
    MemoryBank,
    TsMemSchedule,
    init_memory,
    momentum_update,
    tsmem_update,
)
from .metrics import clustering_scores, evaluate

AGGREGATION_MODES = ("none", "cma", "ima")
MEMORY_UPDATE_MODES = ("tsmem", "rtmem", "momentum")

_SCOPE_OF_MODALITY = {VISIBLE: SCOPE_VISIBLE, INFRARED: SCOPE_INFRARED}


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 100
    dim_out: int = 16
    num_ids_per_batch: int = 8
    num_instances_per_id: int = 16
    iters_per_epoch: int = 2
    lr: float = 0.00035
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 20
    alpha: float = 0.2
    tau: float = 0.05
    use_instance_loss: bool = True
    instance_loss_weight: float = 1.0
    use_inter_phase: bool = True
    use_emcc: bool = True
    aggregation: str = "ima"
    memory_update: str = "tsmem"
    memory_momentum: float = 0.2
    switch_epoch: int = 50
    blend_offset: float = 0.1
    eps_start: float = 0.6
    eps_end: float = 0.5
    k1: int = 30
    k2_intra: int = 2
    k2_inter: int = 3
    k3: int = 20
    min_samples: int = 4
    aug_jitter_sigma: float = 0.0
    loss_weights: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.num_ids_per_batch < 1 or self.num_instances_per_id < 1:
            raise ValueError("batch composition must be positive")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.aggregation not in AGGREGATION_MODES:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.memory_update not in MEMORY_UPDATE_MODES:
            raise ValueError(f"unknown memory update {self.memory_update!r}")

    def cluster_schedule(self) -> ClusterSchedule:
        return ClusterSchedule(
            epochs=self.epochs,
            eps_start=self.eps_start,
            eps_end=self.eps_end,
            k1=self.k1,
            k2_intra=self.k2_intra,
            k2_inter=self.k2_inter,
            k3=self.k3,
            min_samples=self.min_samples,
        )

    def tsmem_schedule(self) -> TsMemSchedule:
        if self.memory_update == "rtmem":
            # replacement in every epoch: the blend phase never starts
            return TsMemSchedule(self.epochs, self.epochs, self.blend_offset)
        return TsMemSchedule(min(self.switch_epoch, self.epochs), self.epochs, self.blend_offset)

    def loss_config(self) -> LossConfig:
        instance_weight = self.instance_loss_weight if self.use_instance_loss else 0.0
        weights = {
            (scope, INSTANCE): instance_weight
            for scope in (SCOPE_VISIBLE, SCOPE_INFRARED, SCOPE_MIXED)
        }
        weights.update(self.loss_weights)
        return LossConfig(tau=self.tau, weights=weights)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_every)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    skipped: bool
    clusters: dict[str, tuple[int, float, float]]  # mode -> (count, noise_frac, ari)
    loss_intra: float
    loss_inter: float
    rank1: float
    map: float
    minp: float


@dataclass
class TrainState:
    config: TrainConfig
    data: DatasetSplit
    encoder: ToyEncoder
    rng: np.random.Generator
    epoch: int = 0
    history: list[EpochRecord] = field(default_factory=list)
    loss_rows: list[tuple[int, str, str, float]] = field(default_factory=list)
    banks: dict[tuple[str, str], MemoryBank] = field(default_factory=dict)
    pairing: CrossModalPairing | None = None


def init_state(config: TrainConfig, data: DatasetSplit) -> TrainState:
    rng = np.random.default_rng(config.seed)
    encoder = ToyEncoder.init(data.train.dim, config.dim_out, rng)
    return TrainState(config=config, data=data, encoder=encoder, rng=rng)


def sample_batch(fs: FeatureSet, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    """Identity-balanced sampling: num_ids pseudo-labels, num_instances each.

    Labels are drawn without replacement; instances within a label are drawn
    without replacement when the label is large enough, with replacement
    otherwise. Returns row indices into fs.
    """
    labels = fs.pseudo_label
    available = np.unique(labels[labels >= 0])
    if available.size < cfg.num_ids_per_batch:
        raise ValueError(
            f"too few clusters: {available.size} < {cfg.num_ids_per_batch}"
        )
    chosen = rng.choice(available, size=cfg.num_ids_per_batch, replace=False)
    rows = []
    for lab in chosen.tolist():
        members = np.nonzero(labels == lab)[0]
        replace_flag = members.size < cfg.num_instances_per_id
        rows.append(rng.choice(members, size=cfg.num_instances_per_id, replace=replace_flag))
    return np.concatenate(rows)


def _combined_intra_labels(
    n: int, vis: ClusterAssignment | None, inf: ClusterAssignment | None
) -> np.ndarray:
    """Both modalities' intra labels in one array (label spaces stay separate;
    the modality column disambiguates them)."""
    labels = np.full(n, NO_LABEL, dtype=np.int64)
    for assignment in (vis, inf):
        if assignment is not None:
            labels[assignment.rows] = assignment.labels
    return labels


def _update_banks(
    state: TrainState,
    scope: str,
    keys: np.ndarray,
    queries: np.ndarray,
    rows: np.ndarray,
    epoch: int,
) -> None:
    """Per key in the batch: one uniformly chosen instance refreshes the
    cluster entry and that instance's own entry."""
    cfg = state.config
    sched = cfg.tsmem_schedule()
    cluster_bank = state.banks.get((scope, CLUSTER))
    instance_bank = state.banks.get((scope, INSTANCE))
    row_to_entry = None
    if instance_bank is not None:
        row_to_entry = {int(r): i for i, r in enumerate(instance_bank.entry_rows)}

    def apply(bank: MemoryBank, key: int, q: np.ndarray, entry: int | None) -> MemoryBank:
        if cfg.memory_update == "momentum":
            return momentum_update(bank, key, q, cfg.memory_momentum, entry)
        return tsmem_update(bank, key, q, epoch, sched, entry)

    for key in np.unique(keys[keys >= 0]).tolist():
        hits = np.nonzero(keys == key)[0]
        pick = int(hits[state.rng.integers(hits.size)])
        q = queries[pick]
        if cluster_bank is not None and key in cluster_bank.key_map:
            cluster_bank = apply(cluster_bank, key, q, None)
        if instance_bank is not None and key in instance_bank.key_map:
            entry_idx = row_to_entry.get(int(rows[pick]))
            if entry_idx is not None:
                pos = int(np.nonzero(instance_bank.key_map[key] == entry_idx)[0][0])
                instance_bank = apply(instance_bank, key, q, pos)
    if cluster_bank is not None:
        state.banks[(scope, CLUSTER)] = cluster_bank
    if instance_bank is not None:
        state.banks[(scope, INSTANCE)] = instance_bank


def _encode_batch(state: TrainState, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Raw inputs (optionally jittered) and their current embeddings."""
    x = state.data.train.features[rows]
    sigma = state.config.aug_jitter_sigma
    if sigma > 0:
        x = x + state.rng.normal(scale=sigma, size=x.shape)
        x = x / np.linalg.norm(x, axis=1, keepdims=True)
    return x, state.encoder.encode(x)


def _run_phase(
    state: TrainState,
    phase: str,
    candidate_fs: FeatureSet,
    candidate_rows: np.ndarray,
    label_lookup: dict[str, np.ndarray],
    epoch: int,
    lr: float,
    losscfg: LossConfig,
) -> float:
    """Sample, step the encoder, and refresh memories for one phase.

    label_lookup maps scope name -> per-train-row label array; candidate_fs
    carries the labels used for balanced sampling and is a row subset of the
    train set given by candidate_rows.
    """
    cfg = state.config
    labels = candidate_fs.pseudo_label
    available = np.unique(labels[labels >= 0]).size
    if available == 0:
        return 0.0
    sample_cfg = cfg
    if available < cfg.num_ids_per_batch:
        sample_cfg = replace(cfg, num_ids_per_batch=available)
    total = 0.0
    term_sums: dict[tuple[str, str], float] = {}
    for _ in range(cfg.iters_per_epoch):
        pos = sample_batch(candidate_fs, sample_cfg, state.rng)
        rows = candidate_rows[pos]
        x, q = _encode_batch(state, rows)
        scope_labels = {scope: arr[rows] for scope, arr in label_lookup.items()}
        batch = QueryBatch(queries=q, modality=state.data.train.modality[rows], labels=scope_labels)
        report = batch_loss(batch, state.banks, losscfg, phase)
        state.encoder = gradient_step(state.encoder, x, report.gradients, lr)
        total += report.total
        for term, value in report.terms.items():
            term_sums[term] = term_sums.get(term, 0.0) + value
        modality = state.data.train.modality[rows]
        for mod, scope in _SCOPE_OF_MODALITY.items():
            sel = modality == mod
            if sel.any() and scope in scope_labels:
                _update_banks(state, scope, scope_labels[scope][sel], q[sel], rows[sel], epoch)
        if phase == PHASE_INTER and SCOPE_MIXED in scope_labels:
            _update_banks(state, SCOPE_MIXED, scope_labels[SCOPE_MIXED], q, rows, epoch)
    for (scope, level), value in sorted(term_sums.items()):
        state.loss_rows.append((epoch, phase, f"{scope}_{level}", value))
    return total


def train_epoch(state: TrainState) -> TrainState:
    """Run one full epoch in place; see the module docstring for the order."""
    cfg = state.config
    epoch = state.epoch
    if epoch >= cfg.epochs:
        raise ValueError("training already finished")
    lr = cfg.lr_at(epoch)
    schedule = cfg.cluster_schedule()
    train = state.data.train
    embedded = state.encoder.encode(train.features)
    zfs = FeatureSet(
        features=embedded,
        modality=train.modality,
        camera=train.camera,
        identity=train.identity,
        pseudo_label=train.pseudo_label,
    )

    assignments: dict[str, ClusterAssignment] = {}
    modes = [INTRA_VISIBLE, INTRA_INFRARED] + ([INTER] if cfg.use_inter_phase else [])
    for mode in modes:
        assignment = cluster_epoch(zfs, schedule, epoch, mode, use_extension=cfg.use_emcc)
        if assignment.num_clusters > 0:
            assignments[mode] = assignment

    stats = {}
    has_identity = np.all(train.identity >= 0)
    for mode in modes:
        assignment = assignments.get(mode)
        if assignment is None:
            stats[mode] = (0, 1.0, float("nan"))
            continue
        ari = float("nan")
        if has_identity:
            ari, _ = clustering_scores(assignment, train.identity[assignment.rows])
        stats[mode] = (assignment.num_clusters, assignment.noise_fraction, ari)

    if INTRA_VISIBLE not in assignments and INTRA_INFRARED not in assignments and (
        not cfg.use_inter_phase or INTER not in assignments
    ):
        state.history.append(
            EpochRecord(epoch, lr, True, stats, 0.0, 0.0, *_eval_metrics(state))
        )
        state.epoch += 1
        return state

    # fresh banks every epoch: pseudo-labels do not persist across clusterings
    state.banks = {}
    state.pairing = None
    for mode, scope in ((INTRA_VISIBLE, SCOPE_VISIBLE), (INTRA_INFRARED, SCOPE_INFRARED)):
        assignment = assignments.get(mode)
        if assignment is not None:
            state.banks[(scope, CLUSTER)] = init_memory(zfs, assignment, CLUSTER, scope)
            state.banks[(scope, INSTANCE)] = init_memory(zfs, assignment, INSTANCE, scope)
    if cfg.use_inter_phase and INTER in assignments:
        state.banks[(SCOPE_MIXED, CLUSTER)] = init_memory(zfs, assignments[INTER], CLUSTER, SCOPE_MIXED)
        state.banks[(SCOPE_MIXED, INSTANCE)] = init_memory(
            zfs, assignments[INTER], INSTANCE, SCOPE_MIXED
        )

    n = len(train)
    intra_labels = _combined_intra_labels(
        n, assignments.get(INTRA_VISIBLE), assignments.get(INTRA_INFRARED)
    )
    label_lookup = {
        SCOPE_VISIBLE: np.where(train.modality == VISIBLE, intra_labels, NO_LABEL),
        SCOPE_INFRARED: np.where(train.modality == INFRARED, intra_labels, NO_LABEL),
    }
    losscfg = cfg.loss_config()

    # intra phase: one balanced batch per modality per iteration
    loss_intra = 0.0
    for mode, scope, modality in (
        (INTRA_VISIBLE, SCOPE_VISIBLE, VISIBLE),
        (INTRA_INFRARED, SCOPE_INFRARED, INFRARED),
    ):
        assignment = assignments.get(mode)
        if assignment is None:
            continue
        rows = assignment.rows
        sub = train.rows(rows).with_pseudo_labels(intra_labels[rows])
        loss_intra += _run_phase(
            state, PHASE_INTRA, sub, rows, label_lookup, epoch, lr, losscfg
        )

    # cross-modal aggregation between the phases
    if (
        cfg.aggregation != "none"
        and (SCOPE_VISIBLE, CLUSTER) in state.banks
        and (SCOPE_INFRARED, CLUSTER) in state.banks
    ):
        vote_fs = FeatureSet(
            features=state.encoder.encode(train.features),
            modality=train.modality,
            camera=train.camera,
            identity=train.identity,
            pseudo_label=intra_labels,
        )
        state.pairing = count_priority_select(
            state.banks[(SCOPE_VISIBLE, CLUSTER)],
            state.banks[(SCOPE_INFRARED, CLUSTER)],
            vote_fs,
        )
        updater = cross_update if cfg.aggregation == "ima" else same_direction_update
        new_vis, new_inf = updater(
            state.banks[(SCOPE_VISIBLE, CLUSTER)],
            state.banks[(SCOPE_INFRARED, CLUSTER)],
            state.pairing,
            cfg.alpha,
        )
        state.banks[(SCOPE_VISIBLE, CLUSTER)] = new_vis
        state.banks[(SCOPE_INFRARED, CLUSTER)] = new_inf

    # inter phase: mixed-cluster batches, plus cross-modal instance keys
    loss_inter = 0.0
    if cfg.use_inter_phase and INTER in assignments:
        inter_assignment = assignments[INTER]
        inter_labels = np.full(n, NO_LABEL, dtype=np.int64)
        inter_labels[inter_assignment.rows] = inter_assignment.labels
        lookup = dict(label_lookup)
        lookup[SCOPE_MIXED] = inter_labels
        if state.pairing is not None:
            v2i = state.pairing.visible_to_infrared()
            i2v = state.pairing.infrared_to_visible()
            cross = np.full(n, NO_LABEL, dtype=np.int64)
            for row in range(n):
                lab = intra_labels[row]
                if lab < 0:
                    continue
                mapped = v2i.get(lab, NO_LABEL) if train.modality[row] == VISIBLE else i2v.get(lab, NO_LABEL)
                cross[row] = mapped
            lookup[SCOPE_VISIBLE] = np.where(
                train.modality == VISIBLE, lookup[SCOPE_VISIBLE], cross
            )
            lookup[SCOPE_INFRARED] = np.where(
                train.modality == INFRARED, lookup[SCOPE_INFRARED], cross
            )
        eligible = (inter_labels >= 0) & (intra_labels >= 0)
        rows = np.nonzero(eligible)[0]
        if rows.size:
            sub = train.rows(rows).with_pseudo_labels(inter_labels[rows])
            loss_inter = _run_phase(state, PHASE_INTER, sub, rows, lookup, epoch, lr, losscfg)

    rank1, mean_ap, mean_inp = _eval_metrics(state)
    state.history.append(
        EpochRecord(epoch, lr, False, stats, loss_intra, loss_inter, rank1, mean_ap, mean_inp)
    )
    state.epoch += 1
    return state


def _eval_metrics(state: TrainState) -> tuple[float, float, float]:
    if state.data.query is None or state.data.gallery is None:
        nan = float("nan")
        return nan, nan, nan
    result = evaluate(state.data.query, state.data.gallery, state.encoder)
    return result.rank1, result.map, result.minp


def run_training(config: TrainConfig, data: DatasetSplit) -> TrainState:
    state = init_state(config, data)
    for _ in range(config.epochs):
        train_epoch(state)
    return state
