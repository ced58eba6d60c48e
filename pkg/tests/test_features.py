import numpy as np
import pytest

from ecul.features import (
    INFRARED,
    NO_IDENTITY,
    NO_LABEL,
    VISIBLE,
    FeatureFileError,
    FeatureSet,
    load_featureset,
    normalize,
    save_featureset,
)


def random_fs(rng, n=10, d=8) -> FeatureSet:
    return FeatureSet(
        features=rng.normal(size=(n, d)),
        modality=rng.integers(0, 2, size=n).astype(np.uint8),
        camera=rng.integers(0, 4, size=n),
        identity=rng.integers(-1, 5, size=n),
        pseudo_label=rng.integers(-2, 3, size=n),
    )


class TestFeatureSet:
    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="empty dataset"):
            FeatureSet(np.zeros((0, 4)), np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            FeatureSet(np.ones((3, 4)), np.zeros(2), np.zeros(3), np.zeros(3), np.zeros(3))

    def test_rejects_nonfinite(self):
        feats = np.ones((2, 3))
        feats[1, 1] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            FeatureSet(feats, np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2))

    def test_immutable(self):
        fs = random_fs(np.random.default_rng(0))
        with pytest.raises(ValueError):
            fs.features[0, 0] = 3.0

    def test_modality_rows(self):
        fs = random_fs(np.random.default_rng(1), n=20)
        vis = fs.modality_rows(VISIBLE)
        inf = fs.modality_rows(INFRARED)
        assert sorted(np.concatenate([vis, inf]).tolist()) == list(range(20))


class TestNormalize:
    def test_three_four_five(self):
        fs = FeatureSet(np.array([[3.0, 4.0]]), [0], [0], [0], [NO_LABEL])
        out = normalize(fs)
        np.testing.assert_allclose(out.features, [[0.6, 0.8]], atol=1e-15)

    def test_idempotent(self):
        fs = normalize(random_fs(np.random.default_rng(2)))
        again = normalize(fs)
        np.testing.assert_allclose(again.features, fs.features, atol=1e-12)

    def test_zero_row_named(self):
        feats = np.ones((3, 4))
        feats[2] = 0.0
        fs = FeatureSet(feats, np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))
        with pytest.raises(ValueError, match="index 2"):
            normalize(fs)

    def test_unit_norms(self):
        fs = normalize(random_fs(np.random.default_rng(3), n=50, d=16))
        norms = np.linalg.norm(fs.features, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)


class TestFileRoundTrip:
    def test_bytes_identical(self, tmp_path):
        fs = random_fs(np.random.default_rng(4), n=10, d=8)
        first = tmp_path / "a.ecul"
        second = tmp_path / "b.ecul"
        save_featureset(fs, first)
        save_featureset(load_featureset(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_arrays_roundtrip(self, tmp_path):
        fs = random_fs(np.random.default_rng(5), n=7, d=5)
        path = tmp_path / "x.ecul"
        save_featureset(fs, path)
        back = load_featureset(path)
        np.testing.assert_array_equal(back.modality, fs.modality)
        np.testing.assert_array_equal(back.camera, fs.camera)
        np.testing.assert_array_equal(back.identity, fs.identity)
        np.testing.assert_array_equal(back.pseudo_label, fs.pseudo_label)
        np.testing.assert_array_equal(
            back.features, fs.features.astype(np.float32).astype(np.float64)
        )

    def test_empty_dataset_error(self, tmp_path):
        path = tmp_path / "empty.ecul"
        import struct

        path.write_bytes(b"ECUL1\n" + struct.pack("<QQ", 0, 4))
        with pytest.raises(FeatureFileError, match="empty dataset"):
            load_featureset(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ecul"
        path.write_bytes(b"NOTECUL" + b"\x00" * 32)
        with pytest.raises(FeatureFileError, match="malformed header"):
            load_featureset(path)

    def test_truncated_labels(self, tmp_path):
        fs = random_fs(np.random.default_rng(6), n=4, d=3)
        path = tmp_path / "cut.ecul"
        save_featureset(fs, path)
        data = path.read_bytes()
        path.write_bytes(data[:-4])  # drop one pseudo-label entry
        with pytest.raises(FeatureFileError, match="length mismatch"):
            load_featureset(path)

    def test_nonfinite_rejected(self, tmp_path):
        fs = random_fs(np.random.default_rng(7), n=3, d=4)
        path = tmp_path / "nan.ecul"
        save_featureset(fs, path)
        data = bytearray(path.read_bytes())
        offset = 6 + 16  # first float32 feature
        data[offset : offset + 4] = np.float32("nan").tobytes()
        path.write_bytes(bytes(data))
        with pytest.raises(FeatureFileError, match="non-finite"):
            load_featureset(path)


def test_relabel_preserves_partition():
    rng = np.random.default_rng(8)
    labels = rng.integers(0, 4, size=30)
    perm = rng.permutation(4)
    relabeled = perm[labels]
    same_a = labels[:, None] == labels[None, :]
    same_b = relabeled[:, None] == relabeled[None, :]
    assert np.array_equal(same_a, same_b)
