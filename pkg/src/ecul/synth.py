"""Seeded generator of cross-modal multi-camera identity clusters.

Each identity gets a random unit anchor; every sample is the normalized sum
of the anchor, a shared per-modality offset, a shared per-camera offset and
Gaussian noise. Offsets are fixed random directions, so the modality and
camera discrepancies are systematic rather than per-sample.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import (
    INFRARED,
    NO_IDENTITY,
    NO_LABEL,
    VISIBLE,
    DatasetSplit,
    FeatureSet,
)


@dataclass
class SynthSpec:
    num_ids: int = 20
    dims: int = 32
    num_cameras: int = 2
    samples_per_group: int = 4   # training rows per (identity, modality, camera)
    query_per_id: int = 8        # infrared query rows per identity
    gallery_per_id: int = 8      # visible gallery rows per identity
    modality_offset_scale: float = 0.6
    camera_offset_scale: float = 0.7
    noise_sigma: float = 0.12    # per-dimension Gaussian spread within an identity
    seed: int = 0

    def __post_init__(self):
        if self.num_ids < 2:
            raise ValueError("need at least two identities")
        if self.dims < 2:
            raise ValueError("need at least two dimensions")
        if min(self.num_cameras, self.samples_per_group, self.query_per_id, self.gallery_per_id) < 1:
            raise ValueError("counts must be positive")
        if min(self.modality_offset_scale, self.camera_offset_scale, self.noise_sigma) < 0:
            raise ValueError("scales must be nonnegative")


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def generate(spec: SynthSpec) -> DatasetSplit:
    """Draw a deterministic train/query/gallery split.

    Queries are infrared, the gallery is visible, so retrieval is strictly
    cross-modal. Identities are recorded on every row; pseudo-labels start
    unset.
    """
    rng = np.random.default_rng(spec.seed)
    anchors = _unit_rows(rng, spec.num_ids, spec.dims)
    modality_dirs = _unit_rows(rng, 2, spec.dims) * spec.modality_offset_scale
    camera_dirs = _unit_rows(rng, 2 * spec.num_cameras, spec.dims) * spec.camera_offset_scale
    camera_dirs = camera_dirs.reshape(2, spec.num_cameras, spec.dims)

    def draw(identity: int, modality: int, camera: int, count: int) -> np.ndarray:
        base = anchors[identity] + modality_dirs[modality] + camera_dirs[modality, camera]
        pts = base + rng.normal(scale=spec.noise_sigma, size=(count, spec.dims)) \
            if spec.noise_sigma > 0 else np.tile(base, (count, 1))
        return pts / np.linalg.norm(pts, axis=1, keepdims=True)

    def build(rows: list[tuple[np.ndarray, int, int, int]]) -> FeatureSet:
        feats = np.concatenate([r[0] for r in rows])
        reps = [r[0].shape[0] for r in rows]
        ident = np.repeat([r[1] for r in rows], reps)
        modal = np.repeat([r[2] for r in rows], reps)
        cam = np.repeat([r[3] for r in rows], reps)
        n = feats.shape[0]
        return FeatureSet(
            features=feats,
            modality=modal.astype(np.uint8),
            camera=cam,
            identity=ident,
            pseudo_label=np.full(n, NO_LABEL),
        )

    train_rows = []
    for identity in range(spec.num_ids):
        for modality in (VISIBLE, INFRARED):
            for camera in range(spec.num_cameras):
                pts = draw(identity, modality, camera, spec.samples_per_group)
                train_rows.append((pts, identity, modality, camera))
    query_rows = []
    gallery_rows = []
    for identity in range(spec.num_ids):
        cam = int(rng.integers(spec.num_cameras))
        query_rows.append((draw(identity, INFRARED, cam, spec.query_per_id), identity, INFRARED, cam))
        cam = int(rng.integers(spec.num_cameras))
        gallery_rows.append(
            (draw(identity, VISIBLE, cam, spec.gallery_per_id), identity, VISIBLE, cam)
        )

    split = DatasetSplit(train=build(train_rows), query=build(query_rows), gallery=build(gallery_rows))
    split.check_cross_modal()
    return split
