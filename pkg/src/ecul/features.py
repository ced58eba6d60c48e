"""Labeled embedding collections and their binary on-disk format.

A feature file stores float32 row-major embeddings plus per-row modality,
camera, identity and pseudo-label annotations. In memory everything is
float64 so downstream numerics stay tight; only storage is 32-bit.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

MAGIC = b"ECUL1\n"

VISIBLE = 0
INFRARED = 1
MODALITY_NAMES = {VISIBLE: "visible", INFRARED: "infrared"}

NOISE = -1        # DBSCAN noise marker
NO_LABEL = -2     # pseudo-label absent
NO_IDENTITY = -1  # ground-truth identity absent

_HEADER = struct.Struct("<QQ")


class FeatureFileError(ValueError):
    """Raised for malformed or inconsistent feature files."""


@dataclass(frozen=True)
class FeatureSet:
    """Immutable N x D embedding matrix with per-row annotations.

    features: float64 (N, D); modality: uint8 codes (VISIBLE/INFRARED);
    camera: int64 small nonnegative ids; identity: int64, NO_IDENTITY when
    unknown; pseudo_label: int64, NOISE for noise rows, NO_LABEL when unset.
    """

    features: np.ndarray
    modality: np.ndarray
    camera: np.ndarray
    identity: np.ndarray
    pseudo_label: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        n, d = feats.shape
        if n < 1:
            raise ValueError("empty dataset")
        if d < 2:
            raise ValueError(f"feature dimension must be >= 2, got {d}")
        if not np.all(np.isfinite(feats)):
            raise ValueError("non-finite feature values")
        object.__setattr__(self, "features", feats)
        for name in ("modality", "camera", "identity", "pseudo_label"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != (n,):
                raise ValueError(
                    f"length mismatch: {name} has {arr.shape}, expected ({n},)"
                )
            dtype = np.uint8 if name == "modality" else np.int64
            object.__setattr__(self, name, arr.astype(dtype, copy=True))
        if not np.all(np.isin(self.modality, (VISIBLE, INFRARED))):
            raise ValueError("modality codes must be 0 (visible) or 1 (infrared)")
        if np.any(self.camera < 0) or np.any(self.camera > np.iinfo(np.uint16).max):
            raise ValueError("camera ids must fit in uint16")
        for name in ("features", "modality", "camera", "identity", "pseudo_label"):
            getattr(self, name).setflags(write=False)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def rows(self, index: np.ndarray) -> "FeatureSet":
        """Row-subset copy (arrays re-owned, labels preserved)."""
        index = np.asarray(index)
        if index.size == 0:
            raise ValueError("empty row selection")
        return FeatureSet(
            features=self.features[index],
            modality=self.modality[index],
            camera=self.camera[index],
            identity=self.identity[index],
            pseudo_label=self.pseudo_label[index],
        )

    def with_pseudo_labels(self, pseudo_label: np.ndarray) -> "FeatureSet":
        return replace(self, pseudo_label=np.asarray(pseudo_label, dtype=np.int64))

    def modality_rows(self, modality: int) -> np.ndarray:
        """Indices of rows captured in the given modality."""
        return np.nonzero(self.modality == modality)[0]


@dataclass(frozen=True)
class DatasetSplit:
    """Train/query/gallery triple; query and gallery are disjoint row sets."""

    train: FeatureSet
    query: FeatureSet
    gallery: FeatureSet

    def check_cross_modal(self):
        """Assert the cross-modal protocol: query and gallery modalities never overlap."""
        qm = set(np.unique(self.query.modality).tolist())
        gm = set(np.unique(self.gallery.modality).tolist())
        if qm & gm:
            raise ValueError("query and gallery share a modality in cross-modal mode")


def normalize(fs: FeatureSet) -> FeatureSet:
    """Scale every feature row to unit Euclidean norm.

    Raises ValueError naming the first all-zero row, which has no direction.
    """
    norms = np.linalg.norm(fs.features, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise ValueError(f"cannot normalize zero feature row at index {zero[0]}")
    return replace(fs, features=fs.features / norms[:, None])


def save_featureset(fs: FeatureSet, path) -> None:
    """Write the binary feature file (float32 storage)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        n, d = fs.features.shape
        fh.write(_HEADER.pack(n, d))
        fh.write(np.ascontiguousarray(fs.features, dtype=np.float32).tobytes())
        fh.write(fs.modality.astype(np.uint8).tobytes())
        fh.write(fs.camera.astype("<u2").tobytes())
        fh.write(fs.identity.astype("<i4").tobytes())
        fh.write(fs.pseudo_label.astype("<i4").tobytes())


def load_featureset(path) -> FeatureSet:
    """Read a binary feature file; see save_featureset for the layout.

    Raises FeatureFileError with a distinct message for a bad magic header,
    a truncated payload, an empty dataset, or non-finite feature values.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + _HEADER.size or data[: len(MAGIC)] != MAGIC:
        raise FeatureFileError(f"malformed header: not a feature file: {path}")
    n, d = _HEADER.unpack_from(data, len(MAGIC))
    if n == 0:
        raise FeatureFileError("empty dataset")
    if d < 2:
        raise FeatureFileError(f"malformed header: dimension {d} < 2")
    offset = len(MAGIC) + _HEADER.size
    expected = offset + n * d * 4 + n * (1 + 2 + 4 + 4)
    if len(data) != expected:
        raise FeatureFileError(
            f"length mismatch: file holds {len(data)} bytes, expected {expected} "
            f"for N={n}, D={d}"
        )

    def take(dtype, count):
        nonlocal offset
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        offset += arr.nbytes
        return arr

    feats = take("<f4", n * d).reshape(n, d).astype(np.float64)
    if not np.all(np.isfinite(feats)):
        raise FeatureFileError("non-finite feature values in file")
    modality = take(np.uint8, n)
    camera = take("<u2", n).astype(np.int64)
    identity = take("<i4", n).astype(np.int64)
    pseudo = take("<i4", n).astype(np.int64)
    try:
        return FeatureSet(feats, modality, camera, identity, pseudo)
    except ValueError as exc:
        raise FeatureFileError(str(exc)) from exc
