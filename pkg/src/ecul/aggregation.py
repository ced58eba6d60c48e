"""Cross-modal cluster pairing by mutual-vote counts and memory aggregation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import INFRARED, VISIBLE, FeatureSet
from .memory import CLUSTER, MemoryBank


@dataclass(frozen=True)
class CrossModalPairing:
    """One-to-one pairs (visible key, infrared key, vote count), votes >= 1."""

    pairs: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        seen_m, seen_n = set(), set()
        for m, n, votes in self.pairs:
            if votes < 1:
                raise ValueError("pair selected with zero votes")
            if m in seen_m or n in seen_n:
                raise ValueError("a cluster key appears in two pairs")
            seen_m.add(m)
            seen_n.add(n)

    def visible_to_infrared(self) -> dict[int, int]:
        return {m: n for m, n, _ in self.pairs}

    def infrared_to_visible(self) -> dict[int, int]:
        return {n: m for m, n, _ in self.pairs}


def vote_matrix(
    vis_bank: MemoryBank, inf_bank: MemoryBank, fs: FeatureSet
) -> np.ndarray:
    """Mutual-vote counts between visible and infrared clusters.

    Every labeled instance votes for the opposite modality's cluster whose
    memory entry it is most similar to; cell (m, n) totals the visible->n
    votes from cluster m and the infrared->m votes from cluster n.
    """
    if vis_bank.level != CLUSTER or inf_bank.level != CLUSTER:
        raise ValueError("count-priority selection pairs cluster-level banks")
    if vis_bank.num_keys == 0 or inf_bank.num_keys == 0:
        raise ValueError("cannot pair against an empty bank")
    votes = np.zeros((vis_bank.num_keys, inf_bank.num_keys), dtype=np.int64)
    for modality, own_bank, other_bank in (
        (VISIBLE, vis_bank, inf_bank),
        (INFRARED, inf_bank, vis_bank),
    ):
        rows = fs.modality_rows(modality)
        rows = rows[fs.pseudo_label[rows] >= 0]
        if rows.size == 0:
            continue
        labels = fs.pseudo_label[rows]
        if labels.max() >= own_bank.num_keys:
            raise ValueError("pseudo-labels exceed the bank's key range")
        sims = fs.features[rows] @ other_bank.entries.T
        choice = np.argmax(sims, axis=1)  # argmax takes the lowest index on ties
        for lab, pick in zip(labels.tolist(), choice.tolist()):
            if modality == VISIBLE:
                votes[lab, pick] += 1
            else:
                votes[pick, lab] += 1
    return votes


def greedy_pairs(votes: np.ndarray) -> CrossModalPairing:
    """Select one-to-one pairs in descending vote count, ties by (m, n)."""
    votes = np.asarray(votes)
    order = []
    for m in range(votes.shape[0]):
        for n in range(votes.shape[1]):
            if votes[m, n] >= 1:
                order.append((-int(votes[m, n]), m, n))
    order.sort()
    used_m, used_n = set(), set()
    pairs = []
    for neg, m, n in order:
        if m in used_m or n in used_n:
            continue
        used_m.add(m)
        used_n.add(n)
        pairs.append((m, n, -neg))
    return CrossModalPairing(tuple(pairs))


def count_priority_select(
    vis_bank: MemoryBank, inf_bank: MemoryBank, fs: FeatureSet
) -> CrossModalPairing:
    """Pair cross-modal clusters greedily by mutual nearest-memory votes."""
    return greedy_pairs(vote_matrix(vis_bank, inf_bank, fs))


def _blend(a: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    merged = alpha * a + (1.0 - alpha) * b
    norm = np.linalg.norm(merged)
    if norm == 0:
        raise ValueError("aggregation produced a zero vector")
    return merged / norm


def cross_update(
    vis_bank: MemoryBank,
    inf_bank: MemoryBank,
    pairing: CrossModalPairing,
    alpha: float,
) -> tuple[MemoryBank, MemoryBank]:
    """Blend each paired entry toward the other side's pre-update value.

    Both assignments read the old entries, so the transform is symmetric in
    the two banks. Unpaired entries pass through untouched.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    new_vis = vis_bank.copy()
    new_inf = inf_bank.copy()
    for m, n, _ in pairing.pairs:
        vi = vis_bank.entry_for(m)
        ii = inf_bank.entry_for(n)
        old_v = vis_bank.entries[vi]
        old_i = inf_bank.entries[ii]
        new_inf.entries[ii] = _blend(old_i, old_v, alpha)
        new_vis.entries[vi] = _blend(old_v, old_i, alpha)
    return new_vis, new_inf


def same_direction_update(
    vis_bank: MemoryBank,
    inf_bank: MemoryBank,
    pairing: CrossModalPairing,
    alpha: float,
) -> tuple[MemoryBank, MemoryBank]:
    """Ablation foil: both entries move toward their pair's common mean
    direction instead of crossing over."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    new_vis = vis_bank.copy()
    new_inf = inf_bank.copy()
    for m, n, _ in pairing.pairs:
        vi = vis_bank.entry_for(m)
        ii = inf_bank.entry_for(n)
        mid = vis_bank.entries[vi] + inf_bank.entries[ii]
        norm = np.linalg.norm(mid)
        if norm == 0:
            continue  # antipodal pair has no mean direction; leave both as-is
        mid = mid / norm
        new_vis.entries[vi] = _blend(vis_bank.entries[vi], mid, alpha)
        new_inf.entries[ii] = _blend(inf_bank.entries[ii], mid, alpha)
    return new_vis, new_inf
