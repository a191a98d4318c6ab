import numpy as np
import pytest

from miakit import baselines as bl
from miakit import data, metrics, nn
from miakit.errors import DataError, ParameterError
from oracles import brute_force_threshold, random_simplex

CLAMP_LOG = -np.log(1e-12)


class TestStatistics:
    def test_top1(self):
        assert bl.stat_top1([0.0, 1.0, 0.0]) == 1.0
        assert bl.stat_top1(np.full(10, 0.1)) == pytest.approx(0.1)
        assert bl.stat_top1([0.7, 0.2, 0.1]) == 0.7

    def test_entropy_delegates(self):
        from miakit.features import entropy

        for p in ([1.0, 0.0], [0.5, 0.25, 0.25], np.full(10, 0.1)):
            assert bl.stat_entropy(p) == entropy(p)

    def test_modified_entropy_confident_correct(self):
        assert bl.stat_modified_entropy([0.0, 1.0, 0.0], 1) == 0.0

    def test_modified_entropy_confident_wrong_is_clamped_finite(self):
        # both clamped log terms fire: (1 - 0) ln(1e-12) for the true
        # class and 1 * ln(1 - 1 -> 1e-12) for the wrong one
        val = bl.stat_modified_entropy([1.0, 0.0], 1)
        assert np.isfinite(val)
        assert val == pytest.approx(2 * CLAMP_LOG, abs=1e-9)
        assert val >= CLAMP_LOG - 1e-9

    def test_modified_entropy_hand_value(self):
        # -0.2 ln 0.8 - 0.2 ln 0.8
        assert bl.stat_modified_entropy([0.8, 0.2], 0) == pytest.approx(
            0.089257, abs=1e-6
        )

    def test_loss_values(self):
        assert bl.stat_loss([1.0, 0.0], 0) == 0.0
        assert bl.stat_loss([1 / np.e, 1 - 1 / np.e], 0) == pytest.approx(1.0, abs=1e-12)
        assert bl.stat_loss([0.7, 0.2, 0.1], 2) == pytest.approx(2.302585, abs=1e-6)

    def test_label_out_of_range(self):
        with pytest.raises(ParameterError):
            bl.stat_loss([0.5, 0.5], 2)
        with pytest.raises(ParameterError):
            bl.stat_modified_entropy([0.5, 0.5], -1)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(0)
        probs = np.vstack([random_simplex(rng, 5) for _ in range(30)])
        ys = rng.integers(0, 5, 30)
        assert np.allclose(
            bl.batch_statistics("top1", probs),
            [bl.stat_top1(p) for p in probs],
        )
        assert np.allclose(
            bl.batch_statistics("entropy", probs),
            [bl.stat_entropy(p) for p in probs],
        )
        assert np.allclose(
            bl.batch_statistics("loss", probs, ys),
            [bl.stat_loss(p, y) for p, y in zip(probs, ys)],
        )
        assert np.allclose(
            bl.batch_statistics("modified_entropy", probs, ys),
            [bl.stat_modified_entropy(p, y) for p, y in zip(probs, ys)],
        )


class TestModifiedEntropyMonotonicity:
    def test_signs_on_random_simplex_points(self):
        # decreasing in p_y, increasing in p_{i != y}
        rng = np.random.default_rng(7)
        h = 1e-6
        for _ in range(1000):
            c = int(rng.integers(2, 8))
            p = random_simplex(rng, c)
            p = np.clip(p, 1e-6, 1 - 1e-6)
            y = int(rng.integers(0, c))
            base = bl.stat_modified_entropy(p, y)
            up_y = p.copy()
            up_y[y] += h
            assert bl.stat_modified_entropy(up_y, y) < base
            i = int(rng.integers(0, c - 1))
            i = i if i < y else i + 1
            up_i = p.copy()
            up_i[i] += h
            assert bl.stat_modified_entropy(up_i, y) > base


class TestPermutationInvariance:
    def test_full_invariance_for_label_free_stats(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            p = random_simplex(rng, 6)
            perm = rng.permutation(6)
            assert bl.stat_top1(p[perm]) == bl.stat_top1(p)
            assert bl.stat_entropy(p[perm]) == pytest.approx(
                bl.stat_entropy(p), abs=1e-12
            )

    def test_invariance_fixing_true_class(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            p = random_simplex(rng, 6)
            y = int(rng.integers(0, 6))
            others = [i for i in range(6) if i != y]
            perm = np.arange(6)
            perm[others] = rng.permutation(others)
            assert bl.stat_loss(p[perm], y) == bl.stat_loss(p, y)
            assert bl.stat_modified_entropy(p[perm], y) == pytest.approx(
                bl.stat_modified_entropy(p, y), abs=1e-12
            )


class TestCorrectnessAttack:
    def test_correct_prediction_is_member(self):
        assert bl.correctness_attack([0.9, 0.1], 0).status == 1

    def test_wrong_prediction_is_non_member(self):
        assert bl.correctness_attack([0.1, 0.9], 0).status == 0

    def test_tie_breaks_to_lowest_index(self):
        assert bl.correctness_attack([0.5, 0.5], 0).status == 1
        assert bl.correctness_attack([0.5, 0.5], 1).status == 0


class TestCalibrateThreshold:
    def test_perfect_separation(self):
        scores = np.array([0.1, 0.2, 0.8, 0.9])
        bits = np.array([0, 0, 1, 1])
        tau = bl.calibrate_threshold(scores, bits, "ge")
        assert tau == pytest.approx(0.5)
        attack = bl.ThresholdAttack("top1", tau, "ge")
        assert metrics.balanced_accuracy(attack.decide(scores), bits) == 1.0

    def test_identical_scores_degenerate(self):
        scores = np.full(10, 0.3)
        bits = np.array([0, 1] * 5)
        tau = bl.calibrate_threshold(scores, bits, "ge")
        decisions = (scores >= tau).astype(int)
        assert metrics.balanced_accuracy(decisions, bits) == 0.5

    def test_matches_brute_force(self):
        rng = np.random.default_rng(12)
        for trial in range(20):
            n = 200
            bits = rng.integers(0, 2, n)
            scores = rng.normal(size=n) + 0.4 * bits
            if trial % 3 == 0:
                scores = np.round(scores, 1)  # force ties
            for direction in ("ge", "le"):
                tau = bl.calibrate_threshold(scores, bits, direction)
                ref_tau, ref_acc = brute_force_threshold(scores, bits, direction)
                assert tau == ref_tau
                attack_dec = (
                    (scores >= tau) if direction == "ge" else (scores <= tau)
                ).astype(int)
                assert metrics.balanced_accuracy(attack_dec, bits) == pytest.approx(
                    ref_acc, abs=1e-12
                )

    def test_single_class_rejected(self):
        with pytest.raises(DataError):
            bl.calibrate_threshold(np.arange(4.0), np.ones(4, dtype=int), "ge")

    def test_direction_enforced_per_kind(self):
        with pytest.raises(ParameterError):
            bl.ThresholdAttack("entropy", 0.5, "ge")
        with pytest.raises(ParameterError):
            bl.ThresholdAttack("top1", 0.5, "le")


@pytest.fixture(scope="module")
def aux_world():
    ds = data.gen_synthetic(600, 4, 6, 2.5, seed=21)
    target_train = ds.subset(range(0, 200))
    aux_members = ds.subset(range(200, 400))
    aux_non = ds.subset(range(400, 600))
    spec = nn.NetworkSpec((6, 24, 4), seed=3)
    return ds, target_train, aux_members, aux_non, spec


class TestNnAttack:
    def test_empty_aux_rejected(self, aux_world):
        ds, _, aux_members, _, spec = aux_world
        with pytest.raises(DataError):
            bl.nn_attack_train(
                ds.subset([]), aux_members, spec, 10, 0.1, seed=1
            )

    def test_zero_epoch_shadow_is_chance(self, aux_world):
        _, _, aux_members, aux_non, spec = aux_world
        model = bl.nn_attack_train(
            aux_members, aux_non, spec, shadow_epochs=0, shadow_lr=0.1,
            seed=1, attack_epochs=0,
        )
        rng = np.random.default_rng(4)
        probs = np.vstack([random_simplex(rng, 4) for _ in range(400)])
        bits = rng.integers(0, 2, 400)
        auc = metrics.roc(model.scores(probs), bits).auc
        assert abs(auc - 0.5) <= 0.05

    def test_desk_pipeline_beats_chance(self, desk_run):
        # pinned-seed self-oracle: the full desk pipeline's NN attack
        report = desk_run["reports"]["nn_attack"][0]
        assert report.balanced_accuracy > 0.5

    def test_overlap_with_target_train_rejected(self, aux_world):
        _, target_train, aux_members, aux_non, spec = aux_world
        with pytest.raises(DataError):
            bl.nn_attack_train(
                target_train, aux_non, spec, 5, 0.1, seed=1,
                target_train_features=target_train.features,
            )

    def test_sorted_posterior_input_is_class_order_independent(self, aux_world):
        _, _, aux_members, aux_non, spec = aux_world
        model = bl.nn_attack_train(
            aux_members, aux_non, spec, shadow_epochs=20, shadow_lr=0.1, seed=3
        )
        p = np.array([0.6, 0.1, 0.2, 0.1])
        assert model.scores(p[None, :])[0] == model.scores(p[::-1][None, :].copy())[0]
