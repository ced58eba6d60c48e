import numpy as np
import pytest

from ecul.clustering import (
    INTER,
    INTRA_INFRARED,
    INTRA_VISIBLE,
    ClusterAssignment,
    ClusterSchedule,
    assign_pseudo_labels,
    cluster_epoch,
    dbscan,
)
from ecul.features import INFRARED, NO_LABEL, NOISE, VISIBLE, FeatureSet, normalize
from ecul.metrics import clustering_scores

from oracles import dbscan_oracle


def canonical(labels: np.ndarray) -> np.ndarray:
    """Relabel clusters by first appearance so partitions compare directly."""
    out = np.full(len(labels), NOISE)
    mapping = {}
    for i, lab in enumerate(labels):
        if lab == NOISE:
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


def random_metric(rng, n):
    pts = rng.normal(size=(n, 3))
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt((diff**2).sum(-1))


class TestDbscan:
    def test_all_zero_distances_one_cluster(self):
        dist = np.zeros((6, 6))
        out = dbscan(dist, eps=0.5, min_samples=4)
        assert out.num_clusters == 1
        assert np.all(out.labels == 0)

    def test_all_far_apart_all_noise(self):
        dist = np.ones((5, 5))
        np.fill_diagonal(dist, 0.0)
        out = dbscan(dist, eps=0.5, min_samples=2)
        assert out.num_clusters == 0
        assert np.all(out.labels == NOISE)

    def test_two_planted_blobs(self):
        rng = np.random.default_rng(0)
        dist = np.full((10, 10), 0.95)
        blob = rng.uniform(0.01, 0.09, size=(5, 5))
        blob = (blob + blob.T) / 2
        dist[:5, :5] = blob
        dist[5:, 5:] = blob
        np.fill_diagonal(dist, 0.0)
        out = dbscan(dist, eps=0.3, min_samples=3)
        assert out.num_clusters == 2
        assert len(set(out.labels[:5])) == 1
        assert len(set(out.labels[5:])) == 1
        np.testing.assert_array_equal(
            canonical(out.labels), canonical(dbscan_oracle(dist, 0.3, 3))
        )

    def test_matches_oracle_randomized(self):
        rng = np.random.default_rng(1)
        for trial in range(40):
            n = int(rng.integers(4, 24))
            dist = random_metric(rng, n)
            eps = float(rng.uniform(0.5, 2.5))
            min_samples = int(rng.integers(2, 5))
            got = dbscan(dist, eps, min_samples)
            want = dbscan_oracle(dist, eps, min_samples)
            np.testing.assert_array_equal(
                canonical(got.labels), canonical(want), err_msg=f"trial {trial}"
            )

    def test_rejects_asymmetric(self):
        dist = np.zeros((3, 3))
        dist[0, 1] = 0.5
        with pytest.raises(ValueError, match="symmetric"):
            dbscan(dist, 0.5, 2)

    def test_rejects_negative(self):
        dist = np.zeros((3, 3))
        dist[0, 1] = dist[1, 0] = -0.1
        with pytest.raises(ValueError, match="negative"):
            dbscan(dist, 0.5, 2)

    def test_clusters_meet_min_samples_on_metric_data(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n = int(rng.integers(8, 30))
            dist = random_metric(rng, n)
            out = dbscan(dist, float(rng.uniform(0.8, 1.8)), 3)
            for rows in out.members.values():
                assert rows.size >= 3

    def test_permutation_invariance_without_ambiguous_borders(self):
        # the deterministic border rule is order dependent only when a border
        # point can reach two clusters; filter those instances out
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 15:
            n = int(rng.integers(6, 25))
            dist = random_metric(rng, n)
            eps, min_samples = float(rng.uniform(0.8, 1.6)), 3
            out = dbscan(dist, eps, min_samples)
            if out.num_clusters == 0:
                continue
            within = dist <= eps
            core = within.sum(1) >= min_samples
            ambiguous = False
            for i in range(n):
                if core[i]:
                    continue
                reaching = {out.labels[j] for j in np.nonzero(within[i])[0] if core[j]}
                if len(reaching) > 1:
                    ambiguous = True
                    break
            if ambiguous:
                continue
            perm = rng.permutation(n)
            permuted = dbscan(dist[np.ix_(perm, perm)], eps, min_samples)
            inv = np.argsort(perm)
            np.testing.assert_array_equal(
                canonical(out.labels), canonical(permuted.labels[inv])
            )
            checked += 1


class TestAssignPseudoLabels:
    def test_all_noise(self):
        fs = normalize(
            FeatureSet(np.ones((4, 3)), np.zeros(4), np.zeros(4), np.zeros(4), np.zeros(4))
        )
        assignment = ClusterAssignment(labels=np.full(4, NOISE), rows=np.arange(4))
        out = assign_pseudo_labels(fs, assignment)
        assert np.all(out.pseudo_label == NOISE)

    def test_remaps_to_contiguous(self):
        fs = normalize(
            FeatureSet(np.ones((4, 3)), np.zeros(4), np.zeros(4), np.zeros(4), np.zeros(4))
        )
        assignment = ClusterAssignment(labels=np.array([3, 7, 3, NOISE]), rows=np.arange(4))
        out = assign_pseudo_labels(fs, assignment)
        np.testing.assert_array_equal(out.pseudo_label, [0, 1, 0, NOISE])

    def test_rows_outside_domain_stay_unlabeled(self):
        fs = normalize(
            FeatureSet(np.ones((5, 3)), np.zeros(5), np.zeros(5), np.zeros(5), np.zeros(5))
        )
        assignment = ClusterAssignment(labels=np.array([0, 0, 1]), rows=np.array([0, 2, 4]))
        out = assign_pseudo_labels(fs, assignment)
        np.testing.assert_array_equal(out.pseudo_label, [0, NO_LABEL, 0, NO_LABEL, 1])


def planted_cross_modal_fs(rng, per_blob=6, offset=0.25):
    """Two identities, both modalities; cross-modal shift smaller than the
    identity separation."""
    anchors = np.array([[1.0, 0, 0, 0], [0, 0, 0, 1.0]])
    shift = np.array([0.0, offset, 0, 0])
    feats, modality, identity = [], [], []
    for ident, anchor in enumerate(anchors):
        for mod in (VISIBLE, INFRARED):
            base = anchor + (shift if mod == INFRARED else 0)
            feats.append(base + rng.normal(scale=0.02, size=(per_blob, 4)))
            modality += [mod] * per_blob
            identity += [ident] * per_blob
    n = len(modality)
    return normalize(
        FeatureSet(
            np.vstack(feats),
            np.array(modality, dtype=np.uint8),
            np.zeros(n),
            np.array(identity),
            np.full(n, NO_LABEL),
        )
    )


class TestClusterEpoch:
    def schedule(self):
        # k3 spans past each 6-point modality blob so the extension can pull
        # cross-modal neighborhoods together
        return ClusterSchedule(
            epochs=10, eps_start=0.55, eps_end=0.55, k1=8, k2_intra=2, k2_inter=2, k3=10,
            min_samples=3,
        )

    def test_empty_modality_errors(self):
        fs = normalize(
            FeatureSet(
                np.ones((4, 3)),
                np.full(4, INFRARED, dtype=np.uint8),
                np.zeros(4),
                np.zeros(4),
                np.full(4, NO_LABEL),
            )
        )
        with pytest.raises(ValueError, match="empty modality subset"):
            cluster_epoch(fs, self.schedule(), 0, INTRA_VISIBLE)

    def test_planted_identities_recovered(self):
        fs = planted_cross_modal_fs(np.random.default_rng(4))
        vis = cluster_epoch(fs, self.schedule(), 0, INTRA_VISIBLE)
        inf = cluster_epoch(fs, self.schedule(), 0, INTRA_INFRARED)
        inter = cluster_epoch(fs, self.schedule(), 0, INTER)
        assert vis.num_clusters == 2
        assert inf.num_clusters == 2
        assert inter.num_clusters == 2
        ari, _ = clustering_scores(inter, fs.identity[inter.rows])
        assert ari == pytest.approx(1.0)

    def test_single_identity_per_modality(self):
        rng = np.random.default_rng(5)
        anchor = np.array([1.0, 0, 0, 0])
        feats = np.vstack(
            [
                anchor + rng.normal(scale=0.02, size=(6, 4)),
                anchor + np.array([0, 0.2, 0, 0]) + rng.normal(scale=0.02, size=(6, 4)),
            ]
        )
        fs = normalize(
            FeatureSet(
                feats,
                np.repeat([VISIBLE, INFRARED], 6).astype(np.uint8),
                np.zeros(12),
                np.zeros(12),
                np.full(12, NO_LABEL),
            )
        )
        sched = self.schedule()
        assert cluster_epoch(fs, sched, 0, INTRA_VISIBLE).num_clusters == 1
        assert cluster_epoch(fs, sched, 0, INTRA_INFRARED).num_clusters == 1
        inter = cluster_epoch(fs, sched, 0, INTER)
        assert inter.num_clusters == 1
        assert inter.noise_fraction == 0.0


def test_schedule_eps_interpolates():
    sched = ClusterSchedule(epochs=11, eps_start=0.6, eps_end=0.5)
    assert sched.eps(0) == pytest.approx(0.6)
    assert sched.eps(10) == pytest.approx(0.5)
    assert sched.eps(5) == pytest.approx(0.55)
    with pytest.raises(ValueError):
        sched.eps(11)
