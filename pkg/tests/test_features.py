import numpy as np
import pytest

from miakit import features
from miakit.errors import DomainError, FormatError
from oracles import random_simplex


class TestEntropy:
    def test_one_hot_is_zero(self):
        assert features.entropy([0.0, 1.0, 0.0]) == 0.0

    def test_uniform_is_log_c(self):
        assert features.entropy(np.full(10, 0.1)) == pytest.approx(np.log(10), abs=1e-12)

    def test_hand_computed(self):
        # -(0.5 ln 0.5 + 2 * 0.25 ln 0.25)
        assert features.entropy([0.5, 0.25, 0.25]) == pytest.approx(1.039721, abs=1e-6)

    def test_negative_entries_rejected(self):
        with pytest.raises(DomainError):
            features.entropy([0.5, -0.1, 0.6])

    def test_bounded_by_log_c(self):
        rng = np.random.default_rng(10)
        for _ in range(300):
            c = int(rng.integers(2, 12))
            p = random_simplex(rng, c)
            assert features.entropy(p) <= np.log(c) + 1e-12

    def test_equality_only_at_uniform(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            c = int(rng.integers(2, 8))
            uniform = np.full(c, 1.0 / c)
            assert features.entropy(uniform) == pytest.approx(np.log(c), abs=1e-9)
            p = random_simplex(rng, c)
            if np.abs(p - 1.0 / c).max() > 1e-3:
                assert features.entropy(p) < np.log(c) - 1e-9


class TestBuildFeature:
    def test_one_hot(self):
        assert np.array_equal(
            features.build_feature([1.0, 0.0]), np.array([1.0, 0.0, 1.0, 0.0])
        )

    def test_symmetric_two_class(self):
        got = features.build_feature([0.5, 0.5])
        assert np.allclose(got, [0.5, 0.5, 0.5, np.log(2)], rtol=0, atol=1e-12)
        assert got[3] == pytest.approx(0.693147, abs=1e-6)

    def test_three_class(self):
        got = features.build_feature([0.7, 0.2, 0.1])
        assert np.allclose(got[:4], [0.7, 0.2, 0.1, 0.7], rtol=0, atol=1e-12)
        assert got[4] == pytest.approx(0.801819, abs=1e-6)

    def test_length_is_c_plus_two(self):
        rng = np.random.default_rng(1)
        for c in (2, 5, 13):
            assert features.build_feature(random_simplex(rng, c)).size == c + 2

    def test_permutation_moves_only_first_c(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            c = int(rng.integers(2, 9))
            p = random_simplex(rng, c)
            perm = rng.permutation(c)
            orig = features.build_feature(p)
            shuffled = features.build_feature(p[perm])
            assert np.array_equal(shuffled[:c], p[perm])
            assert shuffled[c] == orig[c]
            assert shuffled[c + 1] == pytest.approx(orig[c + 1], abs=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        rows = np.vstack([random_simplex(rng, 6) for _ in range(20)])
        batch = features.build_features(rows)
        for i in range(20):
            assert np.allclose(
                batch[i], features.build_feature(rows[i]), rtol=0, atol=1e-12
            )


class TestFeatureDump:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        rows = rng.normal(size=(40, 7))
        path = tmp_path / "f.features"
        features.write_feature_dump(rows, path)
        loaded = features.load_feature_dump(path)
        assert loaded.shape == rows.shape
        # 9 significant digits both ways
        features.write_feature_dump(loaded, tmp_path / "g.features")
        assert path.read_bytes() == (tmp_path / "g.features").read_bytes()

    def test_header(self, tmp_path):
        path = tmp_path / "f.features"
        features.write_feature_dump(np.zeros((2, 5)), path)
        assert path.read_text().splitlines()[0] == "mia-features v1 dim=5"

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "f.features"
        path.write_text("something else\n1,2\n")
        with pytest.raises(FormatError):
            features.load_feature_dump(path)

    def test_wrong_width_rejected(self, tmp_path):
        path = tmp_path / "f.features"
        path.write_text("mia-features v1 dim=3\n1,2,3\n1,2\n")
        with pytest.raises(FormatError, match="row 2"):
            features.load_feature_dump(path)
