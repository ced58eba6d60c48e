"""Instance- and cluster-level proxy memories and their update rules."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterAssignment
from .features import FeatureSet

INSTANCE = "instance"
CLUSTER = "cluster"
LEVELS = (INSTANCE, CLUSTER)

SCOPE_VISIBLE = "visible"
SCOPE_INFRARED = "infrared"
SCOPE_MIXED = "mixed"
SCOPES = (SCOPE_VISIBLE, SCOPE_INFRARED, SCOPE_MIXED)

MEMORY_MAGIC = b"ECULM\n"
_MEM_HEADER = struct.Struct("<BBQQ")

_NORM_TOL = 1e-6


@dataclass
class MemoryBank:
    """Unit-norm proxy vectors keyed by pseudo-label.

    entries is a K x D matrix; key_map maps each pseudo-label to the entry
    indices representing it (a single centroid at cluster level, one entry
    per member instance at instance level). entry_rows records the source
    feature row of each instance entry (-1 at cluster level).
    """

    entries: np.ndarray
    level: str
    scope: str
    key_map: dict[int, np.ndarray]
    entry_rows: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.level not in LEVELS:
            raise ValueError(f"unknown memory level {self.level!r}")
        if self.scope not in SCOPES:
            raise ValueError(f"unknown memory scope {self.scope!r}")
        if self.entry_rows is None:
            self.entry_rows = np.full(len(self.entries), -1, dtype=np.int64)
        self.entry_rows = np.asarray(self.entry_rows, dtype=np.int64)
        self.key_map = {int(k): np.asarray(v, dtype=np.int64) for k, v in self.key_map.items()}
        self.check()

    def check(self):
        k = self.entries.shape[0]
        norms = np.linalg.norm(self.entries, axis=1)
        if k and np.max(np.abs(norms - 1.0)) > _NORM_TOL:
            raise ValueError("memory entries must be unit norm")
        covered = np.zeros(k, dtype=bool)
        for key in range(len(self.key_map)):
            if key not in self.key_map:
                raise ValueError("key_map must cover a contiguous 0..C-1 range")
            covered[self.key_map[key]] = True
        if not covered.all():
            raise ValueError("orphaned memory entries outside key_map")

    @property
    def num_keys(self) -> int:
        return len(self.key_map)

    def entry_for(self, key: int, entry: int | None = None) -> int:
        """Resolve (key, optional position) to a single entry index."""
        if key not in self.key_map:
            raise KeyError(f"unknown pseudo-label {key}")
        idx = self.key_map[key]
        if entry is None:
            if idx.size != 1:
                raise ValueError(
                    f"pseudo-label {key} has {idx.size} entries; pass entry= to pick one"
                )
            return int(idx[0])
        return int(idx[entry])

    def copy(self) -> "MemoryBank":
        return MemoryBank(
            entries=self.entries.copy(),
            level=self.level,
            scope=self.scope,
            key_map={k: v.copy() for k, v in self.key_map.items()},
            entry_rows=self.entry_rows.copy(),
        )


@dataclass
class TsMemSchedule:
    """Two-step update schedule: replace early, blend with growing retention late.

    Retention g(e) = clamp((e - switch_epoch) / total_epochs + blend_offset, 0, 1)
    applies from switch_epoch onward; before it the stored entry is replaced
    by the (normalized) incoming feature.
    """

    switch_epoch: int = 50
    total_epochs: int = 100
    blend_offset: float = 0.1

    def __post_init__(self):
        if not 0 <= self.switch_epoch <= self.total_epochs:
            raise ValueError("switch_epoch must lie in [0, total_epochs]")

    def retention(self, epoch: int) -> float:
        g = (epoch - self.switch_epoch) / self.total_epochs + self.blend_offset
        return float(min(max(g, 0.0), 1.0))


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("cannot normalize a zero vector")
    return v / norm


def init_memory(
    fs: FeatureSet, assignment: ClusterAssignment, level: str, scope: str
) -> MemoryBank:
    """Build a bank from a cluster assignment.

    Cluster level stores the normalized mean of each cluster's feature rows;
    instance level stores one normalized entry per non-noise row. Noise rows
    never enter the bank.
    """
    if level not in LEVELS:
        raise ValueError(f"unknown memory level {level!r}")
    members = assignment.members
    if not members:
        raise ValueError("cannot initialize memory from zero clusters")
    if level == CLUSTER:
        entries = np.empty((len(members), fs.dim))
        for c, rows in members.items():
            centroid = fs.features[rows].mean(axis=0)
            norm = np.linalg.norm(centroid)
            if norm < 1e-12:
                raise ValueError(f"degenerate centroid for cluster {c}")
            entries[c] = centroid / norm
        key_map = {c: np.array([c]) for c in members}
        rows = np.full(len(members), -1, dtype=np.int64)
        return MemoryBank(entries, CLUSTER, scope, key_map, rows)

    entry_rows = []
    key_map: dict[int, list[int]] = {}
    for c, rows in members.items():
        key_map[c] = list(range(len(entry_rows), len(entry_rows) + rows.size))
        entry_rows.extend(rows.tolist())
    entry_rows = np.asarray(entry_rows, dtype=np.int64)
    feats = fs.features[entry_rows]
    norms = np.linalg.norm(feats, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError("degenerate zero feature row in instance memory")
    entries = feats / norms[:, None]
    return MemoryBank(
        entries, INSTANCE, scope, {k: np.asarray(v) for k, v in key_map.items()}, entry_rows
    )


def _check_query(q: np.ndarray, dim: int) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (dim,):
        raise ValueError("query dimension does not match the bank")
    if abs(np.linalg.norm(q) - 1.0) > _NORM_TOL:
        raise ValueError("query must be unit norm")
    return q


def tsmem_update(
    bank: MemoryBank,
    key: int,
    q: np.ndarray,
    epoch: int,
    sched: TsMemSchedule,
    entry: int | None = None,
) -> MemoryBank:
    """Two-step update of one entry; all other entries are untouched.

    Before switch_epoch the entry becomes the normalized query outright;
    afterwards it becomes normalize(g * old + (1 - g) * q) with the
    schedule's clamped retention g.
    """
    q = _check_query(q, bank.entries.shape[1])
    idx = bank.entry_for(key, entry)
    out = bank.copy()
    if epoch < sched.switch_epoch:
        out.entries[idx] = _unit(q)
    else:
        g = sched.retention(epoch)
        out.entries[idx] = _unit(g * bank.entries[idx] + (1.0 - g) * q)
    return out


def momentum_update(
    bank: MemoryBank, key: int, q: np.ndarray, alpha: float, entry: int | None = None
) -> MemoryBank:
    """Plain momentum rule: entry <- normalize(alpha * old + (1 - alpha) * q)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    q = _check_query(q, bank.entries.shape[1])
    idx = bank.entry_for(key, entry)
    out = bank.copy()
    out.entries[idx] = _unit(alpha * bank.entries[idx] + (1.0 - alpha) * q)
    return out


def save_memory(bank: MemoryBank, path) -> None:
    """Bank snapshot: feature-file layout plus a level/scope header."""
    keys = np.full(len(bank.entries), -1, dtype=np.int64)
    for key, idx in bank.key_map.items():
        keys[idx] = key
    with open(path, "wb") as fh:
        fh.write(MEMORY_MAGIC)
        k, d = bank.entries.shape
        fh.write(
            _MEM_HEADER.pack(LEVELS.index(bank.level), SCOPES.index(bank.scope), k, d)
        )
        fh.write(np.ascontiguousarray(bank.entries, dtype=np.float32).tobytes())
        fh.write(keys.astype("<i4").tobytes())
        fh.write(bank.entry_rows.astype("<i8").tobytes())


def load_memory(path) -> MemoryBank:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MEMORY_MAGIC)] != MEMORY_MAGIC:
        raise ValueError(f"not a memory snapshot: {path}")
    level_code, scope_code, k, d = _MEM_HEADER.unpack_from(data, len(MEMORY_MAGIC))
    offset = len(MEMORY_MAGIC) + _MEM_HEADER.size
    entries = np.frombuffer(data, "<f4", k * d, offset).reshape(k, d).astype(np.float64)
    offset += k * d * 4
    keys = np.frombuffer(data, "<i4", k, offset).astype(np.int64)
    offset += k * 4
    entry_rows = np.frombuffer(data, "<i8", k, offset).astype(np.int64)
    key_map: dict[int, list[int]] = {}
    for i, key in enumerate(keys.tolist()):
        key_map.setdefault(key, []).append(i)
    # float32 storage can leave norms a hair off; re-normalize on load
    norms = np.linalg.norm(entries, axis=1)
    entries = entries / norms[:, None]
    return MemoryBank(
        entries,
        LEVELS[level_code],
        SCOPES[scope_code],
        {k: np.asarray(v) for k, v in key_map.items()},
        entry_rows,
    )
