"""Density-based pseudo-label assignment over Jaccard distance matrices."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .features import INFRARED, NO_LABEL, NOISE, VISIBLE, FeatureSet
from .encoding import (
    INTER_MODALITY,
    INTRA_MODALITY,
    EmccParams,
    extend_encoding,
    jaccard_distance,
    k_reciprocal_encoding,
)

INTRA_VISIBLE = "intra_visible"
INTRA_INFRARED = "intra_infrared"
INTER = "inter"
CLUSTER_MODES = (INTRA_VISIBLE, INTRA_INFRARED, INTER)


@dataclass
class ClusterAssignment:
    """Pseudo-labels for a row subset.

    labels[k] is the cluster id of subset position k (NOISE for unassigned
    rows); rows maps subset positions back to the original feature rows.
    """

    labels: np.ndarray
    rows: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.rows = np.asarray(self.rows, dtype=np.int64)
        if self.labels.shape != self.rows.shape:
            raise ValueError("labels and rows must align")

    @property
    def num_clusters(self) -> int:
        non_noise = self.labels[self.labels != NOISE]
        return int(non_noise.max()) + 1 if non_noise.size else 0

    @property
    def members(self) -> dict[int, np.ndarray]:
        """Cluster id -> original row indices."""
        out = {}
        for c in range(self.num_clusters):
            out[c] = self.rows[self.labels == c]
        return out

    @property
    def noise_fraction(self) -> float:
        return float(np.mean(self.labels == NOISE))


@dataclass
class ClusterSchedule:
    """Per-epoch clustering parameters.

    eps interpolates linearly from eps_start to eps_end across the epoch
    range. The k values and min_samples stay constant. All defaults are
    plain configuration, not values carried over from any reference setup.
    """

    epochs: int = 100
    eps_start: float = 0.6
    eps_end: float = 0.5
    k1: int = 30
    k2_intra: int = 2
    k2_inter: int = 3
    k3: int = 20
    min_samples: int = 4

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("schedule needs at least one epoch")
        if min(self.eps_start, self.eps_end) <= 0:
            raise ValueError("eps must stay positive")
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")

    def eps(self, epoch: int) -> float:
        if not 0 <= epoch < self.epochs:
            raise ValueError(f"epoch {epoch} outside schedule range 0..{self.epochs - 1}")
        if self.epochs == 1:
            return self.eps_start
        t = epoch / (self.epochs - 1)
        return self.eps_start + t * (self.eps_end - self.eps_start)

    def emcc_params(self, mode: str) -> EmccParams:
        if mode == INTER:
            return EmccParams(self.k1, self.k2_inter, self.k3, INTER_MODALITY)
        return EmccParams(self.k1, self.k2_intra, self.k3, INTRA_MODALITY)


def dbscan(dist: np.ndarray, eps: float, min_samples: int) -> ClusterAssignment:
    """DBSCAN on a precomputed distance matrix, made fully deterministic.

    Core points hold >= min_samples rows within eps (self included); clusters
    grow over density-connected cores in ascending row order, so a border
    point reachable from several clusters always joins the lowest cluster id.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if dist.shape != (n, n):
        raise ValueError("distance matrix must be square")
    if np.any(dist < 0):
        raise ValueError("distance matrix has negative entries")
    if np.max(np.abs(dist - dist.T)) > 1e-9:
        raise ValueError("distance matrix is not symmetric")
    if eps <= 0:
        raise ValueError("eps must be positive")

    within = dist <= eps
    core = within.sum(axis=1) >= min_samples
    labels = np.full(n, NOISE, dtype=np.int64)
    cluster = 0
    for seed in range(n):
        if not core[seed] or labels[seed] != NOISE:
            continue
        labels[seed] = cluster
        queue = deque([seed])
        while queue:
            p = queue.popleft()
            for q in np.nonzero(within[p])[0]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return ClusterAssignment(labels=labels, rows=np.arange(n))


def assign_pseudo_labels(fs: FeatureSet, assignment: ClusterAssignment) -> FeatureSet:
    """Write an assignment into a copy of fs.

    Cluster ids are remapped to a contiguous 0..C-1 range (ascending original
    id order), noise rows are flagged, rows outside the assignment domain are
    left unlabeled.
    """
    if assignment.rows.size and assignment.rows.max() >= len(fs):
        raise ValueError("assignment refers to rows outside the feature set")
    labels = np.full(len(fs), NO_LABEL, dtype=np.int64)
    subset = assignment.labels
    uniq = np.unique(subset[subset != NOISE])
    remap = {int(old): new for new, old in enumerate(uniq.tolist())}
    out = np.array([remap[int(v)] if v != NOISE else NOISE for v in subset], dtype=np.int64)
    labels[assignment.rows] = out
    return fs.with_pseudo_labels(labels)


def mode_distance(
    fs: FeatureSet,
    schedule: ClusterSchedule,
    mode: str,
    use_extension: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Jaccard distance matrix for one clustering mode.

    Returns (dist, rows) where rows maps matrix positions to original
    feature rows. Intra modes restrict to one modality before encoding;
    inter mode keeps every row and lets camera+modality groups steer the
    extension. k1 is capped at subset size - 1 so small desk-scale subsets
    stay usable with large configured ranges.
    """
    if mode not in CLUSTER_MODES:
        raise ValueError(f"unknown clustering mode {mode!r}")
    if mode == INTER:
        rows = np.arange(len(fs))
    else:
        modality = VISIBLE if mode == INTRA_VISIBLE else INFRARED
        rows = fs.modality_rows(modality)
        if rows.size == 0:
            raise ValueError(f"empty modality subset for {mode}")
    sub = fs.rows(rows)
    params = schedule.emcc_params(mode)
    k1 = min(params.k1, len(sub) - 1)
    if k1 < 1:
        raise ValueError("subset too small for reciprocal encoding")
    encodings = k_reciprocal_encoding(sub, k1)
    if use_extension:
        encodings = extend_encoding(encodings, sub, params)
    return jaccard_distance(encodings), rows


def cluster_epoch(
    fs: FeatureSet,
    schedule: ClusterSchedule,
    epoch: int,
    mode: str,
    use_extension: bool = True,
) -> ClusterAssignment:
    """One clustering round: encode, extend, Jaccard, DBSCAN.

    Setting use_extension=False skips the group-balanced extension and
    clusters on the plain reciprocal encodings.
    """
    dist, rows = mode_distance(fs, schedule, mode, use_extension)
    assignment = dbscan(dist, schedule.eps(epoch), schedule.min_samples)
    return ClusterAssignment(labels=assignment.labels, rows=rows)
