"""Retrieval evaluation (CMC / mAP / mINP) and clustering agreement scores."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

from .clustering import ClusterAssignment
from .encoder import ToyEncoder
from .features import NOISE, FeatureSet


@dataclass
class EvalResult:
    """Per-rank CMC curve plus mAP and mINP, with a per-query detail table."""

    cmc: np.ndarray
    map: float
    minp: float
    per_query: list[dict]

    @property
    def rank1(self) -> float:
        return float(self.cmc[0])


def evaluate(
    query: FeatureSet,
    gallery: FeatureSet,
    encoder: ToyEncoder | None = None,
    filter_same_camera: bool = False,
) -> EvalResult:
    """Rank the gallery by cosine similarity for every query and score it.

    CMC@r is the fraction of queries with a true match in the top r; AP
    averages precision at each true-match rank; INP is the number of true
    matches over the rank of the hardest one. With filter_same_camera set,
    gallery rows sharing both identity and camera with the query are dropped
    first (queries left without any match are skipped).
    """
    if query.dim != gallery.dim:
        raise ValueError("query and gallery dimensions differ")
    qf, gf = query.features, gallery.features
    if encoder is not None:
        qf = encoder.encode(qf)
        gf = encoder.encode(gf)
    qn = qf / np.linalg.norm(qf, axis=1, keepdims=True)
    gn = gf / np.linalg.norm(gf, axis=1, keepdims=True)
    missing = np.setdiff1d(query.identity, gallery.identity)
    if missing.size:
        raise ValueError(f"query identity {missing[0]} absent from gallery")

    sims = qn @ gn.T
    n_gallery = len(gallery)
    cmc_sum = np.zeros(n_gallery)
    ap_sum = 0.0
    inp_sum = 0.0
    valid = 0
    per_query = []
    for i in range(len(query)):
        keep = np.ones(n_gallery, dtype=bool)
        if filter_same_camera:
            keep = ~((gallery.identity == query.identity[i]) & (gallery.camera == query.camera[i]))
        sim_i = sims[i, keep]
        ids_i = gallery.identity[keep]
        # descending similarity, ties by ascending gallery index
        order = np.argsort(-sim_i, kind="stable")
        matches = ids_i[order] == query.identity[i]
        n_matches = int(matches.sum())
        if n_matches == 0:
            continue
        valid += 1
        first = int(np.argmax(matches))
        cmc_sum[first:] += 1.0
        ranks = np.nonzero(matches)[0] + 1
        ap = float(np.mean(np.arange(1, n_matches + 1) / ranks))
        inp = n_matches / float(ranks[-1])
        ap_sum += ap
        inp_sum += inp
        per_query.append(
            {
                "query": i,
                "identity": int(query.identity[i]),
                "first_match_rank": first + 1,
                "ap": ap,
                "inp": inp,
            }
        )
    if valid == 0:
        raise ValueError("no query has a reachable true match")
    return EvalResult(
        cmc=cmc_sum / valid, map=ap_sum / valid, minp=inp_sum / valid, per_query=per_query
    )


def clustering_scores(
    assignment: ClusterAssignment, identities: np.ndarray
) -> tuple[float, float]:
    """ARI and NMI of an assignment against ground-truth identities.

    Noise rows count as singleton clusters so they are penalized rather
    than silently dropped.
    """
    identities = np.asarray(identities)
    labels = assignment.labels.copy()
    if labels.shape != identities.shape:
        raise ValueError("assignment and identities must align")
    noise = labels == NOISE
    if noise.any():
        fresh = labels.max() + 1 if (~noise).any() else 0
        labels[noise] = np.arange(fresh, fresh + noise.sum())
    with warnings.catch_warnings():
        # singleton noise labels legitimately inflate the class count
        warnings.simplefilter("ignore", UserWarning)
        ari = float(adjusted_rand_score(identities, labels))
        nmi = float(normalized_mutual_info_score(identities, labels))
    return ari, nmi
