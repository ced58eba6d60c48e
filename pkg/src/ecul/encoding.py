"""Neighborhood encoding vectors and pairwise Jaccard distances.

Pipeline: each row gets a sparse nonnegative encoding over the gallery from
its k-reciprocal neighbor set; the encoding is then extended by averaging
neighbor encodings under per-camera (and per-modality) caps, and finally
pairwise weighted Jaccard distances feed the clustering stage.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import FeatureSet

INTRA_MODALITY = "intra_modality"
INTER_MODALITY = "inter_modality"


@dataclass
class EmccParams:
    """Extension parameters.

    k1 bounds the reciprocal proximity range, k2 caps how many neighbors per
    camera (or camera+modality) group may contribute, k3 bounds the rank
    window the contributors are drawn from.
    """

    k1: int = 30
    k2: int = 2
    k3: int = 20
    mode: str = INTRA_MODALITY

    def __post_init__(self):
        if min(self.k1, self.k2, self.k3) < 1:
            raise ValueError("k1, k2, k3 must all be >= 1")
        if self.mode not in (INTRA_MODALITY, INTER_MODALITY):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class EncodingVector:
    """Sparse nonnegative row of neighborhood weights over the gallery."""

    owner: int
    size: int
    indices: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise ValueError("indices and values must be matching 1-D arrays")
        if np.any(self.values <= 0):
            raise ValueError("stored weights must be strictly positive")

    @classmethod
    def from_dense(cls, owner: int, row: np.ndarray) -> "EncodingVector":
        row = np.asarray(row, dtype=np.float64)
        if np.any(row < 0):
            raise ValueError("encoding rows must be nonnegative")
        idx = np.nonzero(row > 0)[0]
        return cls(owner=owner, size=row.size, indices=idx, values=row[idx])

    def to_dense(self) -> np.ndarray:
        row = np.zeros(self.size)
        row[self.indices] = self.values
        return row

    @property
    def support(self) -> frozenset:
        return frozenset(self.indices.tolist())


def pairwise_distances(features: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix with an exactly zero diagonal."""
    sq = np.sum(features * features, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (features @ features.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def _neighbor_order(dist: np.ndarray) -> np.ndarray:
    # Stable sort on distance: ties resolve by ascending original row index.
    return np.argsort(dist, axis=1, kind="stable")


def k_reciprocal_encoding(fs: FeatureSet, k1: int) -> list[EncodingVector]:
    """Initial encoding from mutual top-k1 neighbor sets.

    Row j enters row i's support iff each lies in the other's k1 nearest
    neighbors (self excluded on both sides); the self entry is always kept.
    Weights are exp(-d(i, j)), so the self entry carries weight 1.
    """
    n = len(fs)
    if k1 >= n:
        raise ValueError(f"k1={k1} must be smaller than the gallery size {n}")
    dist = pairwise_distances(fs.features)
    masked = dist.copy()
    np.fill_diagonal(masked, np.inf)
    top = np.argsort(masked, axis=1, kind="stable")[:, :k1]
    in_top = np.zeros((n, n), dtype=bool)
    in_top[np.arange(n)[:, None], top] = True
    support = in_top & in_top.T
    np.fill_diagonal(support, True)
    weights = np.where(support, np.exp(-dist), 0.0)
    return [EncodingVector.from_dense(i, weights[i]) for i in range(n)]


def _group_ids(fs: FeatureSet, mode: str) -> np.ndarray:
    if mode == INTRA_MODALITY:
        return fs.camera.copy()
    # camera x modality pairs get distinct group codes
    return fs.camera * 2 + fs.modality


def extension_contributors(
    fs: FeatureSet, params: EmccParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Contributor bookkeeping for the encoding extension.

    Returns (neighbors, keep, group_count) where neighbors is the (N, w)
    rank-ordered window of nearest rows (self included, w = min(k3, N)),
    keep marks the window slots whose running same-group count has not yet
    exceeded k2, and group_count[i, g] is the number of kept slots of group
    g in row i's window.
    """
    n = len(fs)
    dist = pairwise_distances(fs.features)
    order = _neighbor_order(dist)
    window = min(params.k3, n)
    neighbors = order[:, :window]
    gid = _group_ids(fs, params.mode)
    groups = np.unique(gid)
    gslot = np.searchsorted(groups, gid[neighbors])  # (N, w) group slot per entry
    keep = np.zeros_like(neighbors, dtype=bool)
    group_count = np.zeros((n, groups.size), dtype=np.int64)
    for slot in range(groups.size):
        member = gslot == slot
        running = np.cumsum(member, axis=1)
        kept = member & (running <= params.k2)
        keep |= kept
        group_count[:, slot] = kept.sum(axis=1)
    return neighbors, keep, group_count


def extend_encoding(
    encodings: list[EncodingVector], fs: FeatureSet, params: EmccParams
) -> list[EncodingVector]:
    """Replace each encoding by a group-balanced average of neighbor encodings.

    For every row, the first k3 ranked neighbors are filtered to at most k2
    per camera group (per camera+modality group in inter mode); each group's
    surviving encodings are averaged, and the per-group averages are averaged
    again over the groups that contributed at least one neighbor.
    """
    n = len(fs)
    if len(encodings) != n:
        raise ValueError("one encoding per feature row is required")
    dense = np.stack([e.to_dense() for e in encodings])
    if dense.shape[1] != n:
        raise ValueError("encoding length does not match the gallery size")
    neighbors, keep, group_count = extension_contributors(fs, params)
    gid = _group_ids(fs, params.mode)
    groups = np.unique(gid)
    gslot = np.searchsorted(groups, gid[neighbors])
    active_groups = np.count_nonzero(group_count, axis=1)  # >= 1: self contributes

    rows, pos = np.nonzero(keep)
    cols = neighbors[rows, pos]
    per_group = group_count[rows, gslot[rows, pos]]
    mix = np.zeros((n, n))
    mix[rows, cols] = 1.0 / (per_group * active_groups[rows])
    extended = mix @ dense
    return [EncodingVector.from_dense(i, extended[i]) for i in range(n)]


def jaccard_distance(encodings: list[EncodingVector]) -> np.ndarray:
    """Pairwise weighted Jaccard distance matrix.

    d(i, j) = 1 - sum_k min(Vi[k], Vj[k]) / sum_k max(Vi[k], Vj[k]); a pair
    of all-zero encodings is assigned distance 1 and the diagonal is 0. The
    min-sums are accumulated column-by-column over the sparse supports, so
    cost scales with support overlap rather than with N^3.
    """
    n = len(encodings)
    if n == 0:
        return np.zeros((0, 0))
    size = encodings[0].size
    row_sum = np.zeros(n)
    cols: list[list[int]] = [[] for _ in range(size)]
    vals: list[list[float]] = [[] for _ in range(size)]
    for i, e in enumerate(encodings):
        if e.size != size:
            raise ValueError("encodings must share a common length")
        row_sum[i] = float(np.sum(e.values))
        for k, v in zip(e.indices.tolist(), e.values.tolist()):
            cols[k].append(i)
            vals[k].append(v)

    min_sum = np.zeros((n, n))
    for k in range(size):
        members = cols[k]
        if not members:
            continue
        idx = np.asarray(members, dtype=np.int64)
        v = np.asarray(vals[k])
        block = np.minimum(v[:, None], v[None, :])
        min_sum[np.ix_(idx, idx)] += block

    max_sum = row_sum[:, None] + row_sum[None, :] - min_sum
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = 1.0 - np.where(max_sum > 0, min_sum / np.where(max_sum > 0, max_sum, 1.0), 0.0)
    dist[max_sum == 0] = 1.0
    np.fill_diagonal(dist, 0.0)
    np.clip(dist, 0.0, 1.0, out=dist)
    return dist
