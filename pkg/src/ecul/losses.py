"""Contrastive objectives over memory banks and their query gradients.

Gradients flow to queries only; bank entries are plain state updated by the
memory module, never differentiated through.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import INFRARED, VISIBLE
from .memory import CLUSTER, INSTANCE, SCOPE_INFRARED, SCOPE_MIXED, SCOPE_VISIBLE, MemoryBank

PHASE_INTRA = "intra"
PHASE_INTER = "inter"

_MODALITY_SCOPE = {VISIBLE: SCOPE_VISIBLE, INFRARED: SCOPE_INFRARED}
_OPPOSITE_SCOPE = {VISIBLE: SCOPE_INFRARED, INFRARED: SCOPE_VISIBLE}


@dataclass
class LossConfig:
    """Temperature and per-term weights for the composite objective."""

    tau: float = 0.05
    weights: dict[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        full = {
            (scope, level): 1.0
            for scope in (SCOPE_VISIBLE, SCOPE_INFRARED, SCOPE_MIXED)
            for level in (CLUSTER, INSTANCE)
        }
        full.update(self.weights)
        if any(w < 0 for w in full.values()):
            raise ValueError("loss weights must be nonnegative")
        if not any(w > 0 for w in full.values()):
            raise ValueError("at least one loss weight must be positive")
        self.weights = full


@dataclass
class LossReport:
    """Weighted total, per-(scope, level) term sums, per-query gradients."""

    total: float
    terms: dict[tuple[str, str], float]
    gradients: np.ndarray


@dataclass
class QueryBatch:
    """Encoded queries with per-scope pseudo-labels.

    labels maps a scope name to an int array over the batch; entries < 0
    mean the query has no key in that scope and the term is skipped.
    """

    queries: np.ndarray
    modality: np.ndarray
    labels: dict[str, np.ndarray]

    def __len__(self) -> int:
        return self.queries.shape[0]


def infonce(
    q: np.ndarray, bank: MemoryBank, positive_key: int, tau: float
) -> tuple[float, np.ndarray]:
    """Softmax contrastive loss of one query against a bank.

    Logits are q . entry / tau over every entry; the loss is the negative
    log-probability of the positive, computed with max-subtracted
    log-sum-exp. When the key owns several entries (instance level) the
    per-entry losses and gradients are averaged.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    q = np.asarray(q, dtype=np.float64)
    if positive_key not in bank.key_map:
        raise KeyError(f"positive key {positive_key} not in bank")
    entries = bank.entries
    logits = entries @ q / tau
    peak = logits.max()
    shifted = logits - peak
    denom = np.sum(np.exp(shifted))
    lse = peak + np.log(denom)
    probs = np.exp(shifted) / denom
    pos = bank.key_map[positive_key]
    loss = float(lse - np.mean(logits[pos]))
    grad = (probs @ entries - entries[pos].mean(axis=0)) / tau
    return loss, grad


def _bank_terms(
    queries: np.ndarray, labels: np.ndarray, bank: MemoryBank, tau: float
) -> tuple[float, np.ndarray]:
    """Sum of per-query losses and their gradients against one bank.

    Vectorized equivalent of calling infonce per query; queries with a
    negative label contribute nothing.
    """
    live = np.nonzero(labels >= 0)[0]
    if live.size == 0:
        return 0.0, np.zeros_like(queries)
    q = queries[live]
    entries = bank.entries
    logits = q @ entries.T / tau                      # (B, K)
    peak = logits.max(axis=1, keepdims=True)
    expd = np.exp(logits - peak)
    denom = expd.sum(axis=1, keepdims=True)
    lse = peak[:, 0] + np.log(denom[:, 0])
    probs = expd / denom

    pos_mask = np.zeros_like(logits)
    counts = np.empty(live.size)
    for row, lab in enumerate(labels[live].tolist()):
        idx = bank.key_map.get(int(lab))
        if idx is None:
            raise KeyError(f"pseudo-label {lab} not present in {bank.scope} {bank.level} bank")
        pos_mask[row, idx] = 1.0
        counts[row] = idx.size
    pos_mean_logit = (pos_mask * logits).sum(axis=1) / counts
    losses = lse - pos_mean_logit
    grads = np.zeros_like(queries)
    grads[live] = (probs @ entries - (pos_mask / counts[:, None]) @ entries) / tau
    return float(losses.sum()), grads


def batch_loss(
    batch: QueryBatch,
    banks: dict[tuple[str, str], MemoryBank],
    cfg: LossConfig,
    phase: str,
) -> LossReport:
    """Composite contrastive loss of a batch against the active banks.

    Intra phase: each query hits its own modality's cluster and instance
    banks. Inter phase additionally hits the mixed banks via the
    inter-modality labels, and any cross-modal key a query carries for the
    opposite modality activates that modality's instance bank (instance
    level only; the key comes from cross-modal cluster pairing).
    """
    if phase not in (PHASE_INTRA, PHASE_INTER):
        raise ValueError(f"unknown phase {phase!r}")
    b = len(batch)
    total = 0.0
    terms: dict[tuple[str, str], float] = {}
    grads = np.zeros_like(batch.queries)

    def add_term(scope: str, level: str, labels: np.ndarray):
        nonlocal total, grads
        weight = cfg.weights[(scope, level)]
        bank = banks.get((scope, level))
        if weight == 0.0 or bank is None or not np.any(labels >= 0):
            return
        value, g = _bank_terms(batch.queries, labels, bank, cfg.tau)
        terms[(scope, level)] = terms.get((scope, level), 0.0) + value
        total += weight * value
        grads += weight * g

    no_key = np.full(b, -1, dtype=np.int64)
    for modality, scope in _MODALITY_SCOPE.items():
        own = np.where(batch.modality == modality, batch.labels.get(scope, no_key), -1)
        for level in (CLUSTER, INSTANCE):
            add_term(scope, level, own)
    if phase == PHASE_INTER:
        mixed = batch.labels.get(SCOPE_MIXED, no_key)
        for level in (CLUSTER, INSTANCE):
            add_term(SCOPE_MIXED, level, mixed)
        for modality, opp_scope in _OPPOSITE_SCOPE.items():
            cross = np.where(
                batch.modality == modality, batch.labels.get(opp_scope, no_key), -1
            )
            add_term(opp_scope, INSTANCE, cross)

    if not np.all(np.isfinite(grads)):
        raise ValueError("non-finite gradient in batch loss")
    return LossReport(total=total, terms=terms, gradients=grads)
