"""Pseudo-label generation, invalid masks, and complementary labels."""

import numpy as np
import pytest

from prsfda.errors import ConfigError, LabelError
from prsfda.pseudo import (
    complementary_labels,
    load_pseudo_set,
    make_pseudo_set,
    pseudo_set_hash,
    save_pseudo_set,
)
from prsfda.seeding import derive_rng


def one_pixel(*p):
    return np.asarray(p, dtype=np.float64).reshape(1, 1, -1)


class TestMakePseudoSet:
    def test_confident_pixel(self):
        ps = make_pseudo_set(one_pixel(0.7, 0.3))
        assert ps.labels[0, 0] == 0
        assert ps.confidence[0, 0] == 0.7
        assert ps.invalid_mask[0, 0] == 0.0

    def test_tie_breaks_to_lowest_class(self):
        ps = make_pseudo_set(one_pixel(0.5, 0.5))
        assert ps.labels[0, 0] == 0
        assert ps.invalid_mask[0, 0] == 1.0  # 0.5 < 0.6

    def test_exact_threshold_is_valid(self):
        ps = make_pseudo_set(one_pixel(0.6, 0.4))
        assert ps.invalid_mask[0, 0] == 0.0  # strict less-than marks invalid

    def test_mask_partition(self):
        rng = np.random.default_rng(0)
        probs = rng.dirichlet(np.ones(4), size=(5, 6))
        ps = make_pseudo_set(probs)
        np.testing.assert_array_equal((1.0 - ps.invalid_mask) + ps.invalid_mask, 1.0)
        np.testing.assert_array_equal(ps.invalid_mask, (ps.confidence < 0.6).astype(float))

    def test_rejects_bad_threshold(self):
        with pytest.raises(ConfigError):
            make_pseudo_set(one_pixel(0.5, 0.5), threshold=1.0)
        with pytest.raises(ConfigError):
            make_pseudo_set(one_pixel(0.5, 0.5), threshold=0.0)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        probs = rng.dirichlet(np.ones(3), size=(4, 4))
        a, b = make_pseudo_set(probs), make_pseudo_set(probs)
        assert np.array_equal(a.labels, b.labels)
        assert pseudo_set_hash(a) == pseudo_set_hash(b)


class TestComplementaryLabels:
    def test_two_class_flip(self):
        labels = np.array([[0, 1], [1, 0]])
        comp = complementary_labels(labels, 2, np.random.default_rng(0))
        np.testing.assert_array_equal(comp, 1 - labels)

    def test_never_equals_input(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            labels = rng.integers(0, 6, size=(8, 8))
            comp = complementary_labels(labels, 6, np.random.default_rng(seed + 100))
            assert np.all(comp != labels)

    def test_class_consistent_remap(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 5, size=(10, 10))
        comp = complementary_labels(labels, 5, np.random.default_rng(3))
        for lab in range(5):
            where = labels == lab
            if where.any():
                assert len(np.unique(comp[where])) == 1

    def test_deterministic_given_seed(self):
        labels = np.random.default_rng(4).integers(0, 4, size=(6, 6))
        a = complementary_labels(labels, 4, derive_rng(7, "comp"))
        b = complementary_labels(labels, 4, derive_rng(7, "comp"))
        assert np.array_equal(a, b)

    def test_rng_consumption_independent_of_present_classes(self):
        # The per-class mapping depends only on the rng stream, not on which
        # classes actually appear in the label map.
        sparse = np.zeros((3, 3), dtype=int)  # only class 0 present
        dense = np.arange(9).reshape(3, 3) % 4
        comp_sparse = complementary_labels(sparse, 4, derive_rng(9, "comp"))
        comp_dense = complementary_labels(dense, 4, derive_rng(9, "comp"))
        assert np.all(comp_sparse == comp_dense[dense == 0][0])

    def test_rejects_bad_inputs(self):
        with pytest.raises(ConfigError):
            complementary_labels(np.zeros((2, 2), dtype=int), 1, np.random.default_rng(0))
        with pytest.raises(LabelError):
            complementary_labels(np.array([[5]]), 4, np.random.default_rng(0))


class TestPersistence:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        probs = rng.dirichlet(np.ones(3), size=(4, 5))
        ps = make_pseudo_set(probs)
        path = tmp_path / "p.plset"
        save_pseudo_set(ps, path, source_checkpoint_hash="abc123")
        loaded = load_pseudo_set(path)
        assert np.array_equal(ps.labels, loaded.labels)
        assert np.array_equal(ps.confidence, loaded.confidence)
        assert np.array_equal(ps.invalid_mask, loaded.invalid_mask)
        assert loaded.threshold == ps.threshold
        assert pseudo_set_hash(ps) == pseudo_set_hash(loaded)
