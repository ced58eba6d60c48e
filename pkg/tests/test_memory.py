import numpy as np
import pytest

from ecul.clustering import ClusterAssignment
from ecul.features import NO_LABEL, NOISE, FeatureSet, normalize
from ecul.memory import (
    CLUSTER,
    INSTANCE,
    SCOPE_MIXED,
    SCOPE_VISIBLE,
    MemoryBank,
    TsMemSchedule,
    init_memory,
    load_memory,
    momentum_update,
    save_memory,
    tsmem_update,
)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def make_fs(features):
    features = np.asarray(features, dtype=np.float64)
    n = len(features)
    return FeatureSet(features, np.zeros(n), np.zeros(n), np.zeros(n), np.full(n, NO_LABEL))


def simple_bank(entries, level=CLUSTER):
    entries = np.asarray(entries, dtype=np.float64)
    if level == CLUSTER:
        key_map = {i: np.array([i]) for i in range(len(entries))}
    else:
        key_map = {0: np.arange(len(entries))}
    return MemoryBank(entries=entries, level=level, scope=SCOPE_VISIBLE, key_map=key_map)


class TestInitMemory:
    def test_singleton_cluster_is_the_row(self):
        fs = normalize(make_fs([[1.0, 2.0], [0.0, 1.0]]))
        assignment = ClusterAssignment(labels=np.array([0, NOISE]), rows=np.arange(2))
        bank = init_memory(fs, assignment, CLUSTER, SCOPE_VISIBLE)
        np.testing.assert_allclose(bank.entries[0], fs.features[0], atol=1e-15)

    def test_antipodal_rows_degenerate(self):
        fs = make_fs([[1.0, 0.0], [-1.0, 0.0]])
        assignment = ClusterAssignment(labels=np.array([0, 0]), rows=np.arange(2))
        with pytest.raises(ValueError, match="degenerate centroid"):
            init_memory(fs, assignment, CLUSTER, SCOPE_VISIBLE)

    def test_three_row_centroid(self):
        rows = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
        fs = make_fs(rows)
        assignment = ClusterAssignment(labels=np.zeros(3, dtype=int), rows=np.arange(3))
        bank = init_memory(fs, assignment, CLUSTER, SCOPE_VISIBLE)
        expected = unit(rows.mean(axis=0))
        np.testing.assert_allclose(bank.entries[0], expected, atol=1e-15)

    def test_instance_level_one_entry_per_row(self):
        rng = np.random.default_rng(0)
        fs = normalize(make_fs(rng.normal(size=(6, 4))))
        labels = np.array([0, 0, 1, 1, NOISE, 1])
        assignment = ClusterAssignment(labels=labels, rows=np.arange(6))
        bank = init_memory(fs, assignment, INSTANCE, SCOPE_MIXED)
        assert bank.entries.shape == (5, 4)  # noise row excluded
        assert set(bank.key_map) == {0, 1}
        assert bank.key_map[1].size == 3
        for entry_idx, row in zip(bank.key_map[0], [0, 1]):
            np.testing.assert_allclose(bank.entries[entry_idx], fs.features[row], atol=1e-12)

    def test_zero_clusters_rejected(self):
        fs = normalize(make_fs([[1.0, 0.0], [0.0, 1.0]]))
        assignment = ClusterAssignment(labels=np.full(2, NOISE), rows=np.arange(2))
        with pytest.raises(ValueError, match="zero clusters"):
            init_memory(fs, assignment, CLUSTER, SCOPE_VISIBLE)


class TestTsMemSchedule:
    def test_worked_retention_value(self):
        sched = TsMemSchedule(switch_epoch=50, total_epochs=100, blend_offset=0.1)
        assert sched.retention(70) == pytest.approx(0.3, abs=1e-15)

    def test_clamped_and_nondecreasing(self):
        sched = TsMemSchedule(switch_epoch=50, total_epochs=100, blend_offset=0.8)
        values = [sched.retention(e) for e in range(50, 101)]
        assert all(0.0 <= g <= 1.0 for g in values)
        assert all(b >= a for a, b in zip(values, values[1:]))
        assert values[-1] == 1.0


class TestTsMemUpdate:
    def test_early_phase_replaces_exactly(self):
        bank = simple_bank(np.eye(3))
        sched = TsMemSchedule(50, 100, 0.1)
        q = unit([1.0, 2.0, 2.0])
        out = tsmem_update(bank, key=1, q=q, epoch=10, sched=sched)
        expected = q / np.linalg.norm(q)
        assert np.array_equal(out.entries[1], expected)  # bit-exact replacement

    def test_late_phase_blends(self):
        bank = simple_bank(np.eye(2))
        sched = TsMemSchedule(50, 100, 0.1)
        q = np.array([0.0, 1.0])
        out = tsmem_update(bank, key=0, q=q, epoch=70, sched=sched)
        expected = unit(0.3 * np.array([1.0, 0.0]) + 0.7 * q)
        np.testing.assert_allclose(out.entries[0], expected, atol=1e-15)

    def test_retention_one_is_fixed_point(self):
        bank = simple_bank(np.eye(2))
        sched = TsMemSchedule(switch_epoch=0, total_epochs=10, blend_offset=5.0)  # clamps to 1
        out = tsmem_update(bank, key=0, q=np.array([0.0, 1.0]), epoch=5, sched=sched)
        np.testing.assert_allclose(out.entries[0], bank.entries[0], atol=1e-15)

    def test_other_entries_untouched(self):
        rng = np.random.default_rng(1)
        entries = rng.normal(size=(5, 4))
        entries /= np.linalg.norm(entries, axis=1, keepdims=True)
        bank = simple_bank(entries)
        out = tsmem_update(bank, 2, unit(rng.normal(size=4)), 0, TsMemSchedule(50, 100, 0.1))
        for k in (0, 1, 3, 4):
            assert np.array_equal(out.entries[k], entries[k])

    def test_unknown_key(self):
        bank = simple_bank(np.eye(2))
        with pytest.raises(KeyError):
            tsmem_update(bank, 7, np.array([1.0, 0.0]), 0, TsMemSchedule(50, 100, 0.1))

    def test_non_unit_query_rejected(self):
        bank = simple_bank(np.eye(2))
        with pytest.raises(ValueError, match="unit norm"):
            tsmem_update(bank, 0, np.array([1.0, 1.0]), 0, TsMemSchedule(50, 100, 0.1))

    def test_instance_entry_targeting(self):
        rng = np.random.default_rng(2)
        entries = rng.normal(size=(3, 4))
        entries /= np.linalg.norm(entries, axis=1, keepdims=True)
        bank = simple_bank(entries, level=INSTANCE)
        with pytest.raises(ValueError, match="entry"):
            tsmem_update(bank, 0, unit(rng.normal(size=4)), 0, TsMemSchedule(50, 100, 0.1))
        q = unit(rng.normal(size=4))
        out = tsmem_update(bank, 0, q, 0, TsMemSchedule(50, 100, 0.1), entry=2)
        assert np.array_equal(out.entries[2], q / np.linalg.norm(q))
        assert np.array_equal(out.entries[0], entries[0])

    def test_entries_stay_unit_norm(self):
        rng = np.random.default_rng(3)
        entries = rng.normal(size=(4, 5))
        entries /= np.linalg.norm(entries, axis=1, keepdims=True)
        bank = simple_bank(entries)
        sched = TsMemSchedule(2, 10, 0.1)
        for epoch in range(8):
            bank = tsmem_update(bank, epoch % 4, unit(rng.normal(size=5)), epoch, sched)
            norms = np.linalg.norm(bank.entries, axis=1)
            np.testing.assert_allclose(norms, 1.0, atol=1e-12)


class TestMomentumUpdate:
    def test_alpha_one_unchanged(self):
        bank = simple_bank(np.eye(2))
        out = momentum_update(bank, 0, np.array([0.0, 1.0]), alpha=1.0)
        np.testing.assert_allclose(out.entries[0], bank.entries[0], atol=1e-15)

    def test_alpha_zero_replaces(self):
        bank = simple_bank(np.eye(2))
        q = unit([1.0, 1.0])
        out = momentum_update(bank, 0, q, alpha=0.0)
        np.testing.assert_allclose(out.entries[0], q, atol=1e-15)

    def test_hand_arithmetic(self):
        bank = simple_bank(np.eye(2))
        q = np.array([0.0, 1.0])
        out = momentum_update(bank, 0, q, alpha=0.2)
        np.testing.assert_allclose(out.entries[0], unit([0.2, 0.8]), atol=1e-15)

    def test_alpha_out_of_range(self):
        bank = simple_bank(np.eye(2))
        with pytest.raises(ValueError, match="alpha"):
            momentum_update(bank, 0, np.array([1.0, 0.0]), alpha=1.5)


class TestBankInvariants:
    def test_rejects_non_unit_entries(self):
        with pytest.raises(ValueError, match="unit norm"):
            simple_bank(np.array([[2.0, 0.0]]))

    def test_rejects_orphaned_entries(self):
        with pytest.raises(ValueError, match="orphaned|contiguous"):
            MemoryBank(
                entries=np.eye(3),
                level=CLUSTER,
                scope=SCOPE_VISIBLE,
                key_map={0: np.array([0]), 1: np.array([1])},
            )

    def test_snapshot_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        fs = normalize(make_fs(rng.normal(size=(6, 4))))
        assignment = ClusterAssignment(labels=np.array([0, 0, 1, 1, 1, NOISE]), rows=np.arange(6))
        bank = init_memory(fs, assignment, INSTANCE, SCOPE_MIXED)
        path = tmp_path / "bank.bin"
        save_memory(bank, path)
        back = load_memory(path)
        assert back.level == bank.level
        assert back.scope == bank.scope
        assert set(back.key_map) == set(bank.key_map)
        np.testing.assert_array_equal(back.entry_rows, bank.entry_rows)
        np.testing.assert_allclose(back.entries, bank.entries, atol=1e-6)
