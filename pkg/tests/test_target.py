import json

import numpy as np
import pytest

from miakit import data, nn, target
from miakit.errors import ParameterError, TrainingError


@pytest.fixture(scope="module")
def toy_net():
    ds = data.gen_synthetic(300, 4, 6, 2.5, seed=3)
    spec = nn.NetworkSpec((6, 16, 8, 4), seed=2)
    net, profile = target.train_target(ds, ds, spec, epochs=15, learning_rate=0.05, seed=4)
    return net, ds, profile


class TestTrainTarget:
    def test_separable_data_reaches_full_train_accuracy(self):
        ds = data.gen_synthetic(100, 2, 4, 8.0, seed=1)
        spec = nn.NetworkSpec((4, 16, 2), seed=1)
        _, profile = target.train_target(ds, ds, spec, epochs=100, learning_rate=0.1, seed=1)
        assert profile.train_accuracy == 1.0

    def test_zero_epochs_is_chance(self):
        ds = data.gen_synthetic(1000, 10, 8, 3.0, seed=2)
        spec = nn.NetworkSpec((8, 16, 10), seed=2)
        _, profile = target.train_target(ds, ds, spec, epochs=0, learning_rate=0.1, seed=2)
        assert abs(profile.train_accuracy - 0.1) <= 0.1

    def test_deterministic(self):
        ds = data.gen_synthetic(200, 3, 5, 2.0, seed=5)
        spec = nn.NetworkSpec((5, 12, 3), seed=6)
        net_a, _ = target.train_target(ds, ds, spec, 10, 0.1, seed=7)
        net_b, _ = target.train_target(ds, ds, spec, 10, 0.1, seed=7)
        assert nn.params_digest(net_a) == nn.params_digest(net_b)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_names_epoch(self):
        ds = data.gen_synthetic(100, 2, 4, 2.0, seed=1)
        spec = nn.NetworkSpec((4, 16, 2), seed=1)
        with pytest.raises(TrainingError, match="epoch"):
            target.train_target(ds, ds, spec, epochs=50, learning_rate=1e4, seed=1)

    def test_shape_mismatch_rejected(self):
        ds = data.gen_synthetic(50, 3, 4, 1.0, seed=0)
        with pytest.raises(ParameterError):
            target.train_target(ds, ds, nn.NetworkSpec((4, 8, 2), seed=0), 1, 0.1, 0)

    def test_default_desk_profile_regression(self, desk_run):
        # frozen by running the pinned pipeline once:
        # train 1.000, test 0.620, gap 0.380 at seed 7
        profile = json.loads(
            (open(f"{desk_run['out_dir']}/target_profile.json")).read()
        )
        assert profile["train_accuracy"] == 1.0
        assert profile["test_accuracy"] == pytest.approx(0.620, abs=0.02)
        assert profile["gap"] >= 0.15


class TestPosteriors:
    def test_empty_input(self, toy_net):
        net, ds, _ = toy_net
        out = target.posteriors(net, np.zeros((0, ds.dim)))
        assert out.shape == (0, ds.n_classes)

    def test_rows_on_simplex_for_random_inputs(self, toy_net):
        net, ds, _ = toy_net
        rng = np.random.default_rng(0)
        x = rng.normal(scale=3.0, size=(10_000, ds.dim))
        probs = target.posteriors(net, x)
        assert np.all(probs >= 0)
        assert np.abs(probs.sum(axis=1) - 1.0).max() <= 1e-9

    def test_order_preserving(self, toy_net):
        net, ds, _ = toy_net
        probs = target.posteriors(net, ds.features[:10])
        flipped = target.posteriors(net, ds.features[:10][::-1])
        assert np.allclose(probs, flipped[::-1], rtol=0, atol=1e-12)


class TestShadows:
    def test_zero_rates_match_target_exactly(self, toy_net):
        net, ds, _ = toy_net
        x = ds.features[0]
        base = target.posteriors(net, x)[0]
        for mode in target.VIEW_MODES:
            sh = target.build_shadows(net, 0.0, 0.0, mode)
            v = sh.view_posterior(x, 0, np.random.default_rng(0))
            assert np.array_equal(np.atleast_1d(np.squeeze(v)), base)

    def test_posterior_masks_reproducible(self, toy_net):
        net, ds, _ = toy_net
        sh = target.build_shadows(net, 0.5, 0.5, "posterior_dropout")
        x = ds.features[3]
        a = sh.view_posterior(x, 0, np.random.default_rng(12))
        b = sh.view_posterior(x, 0, np.random.default_rng(12))
        assert np.array_equal(a, b)

    def test_network_dropout_monte_carlo_mean(self, toy_net):
        # tolerance from observed variance at this pinned setup
        net, ds, _ = toy_net
        sh = target.build_shadows(net, 0.1, 0.1, "network_dropout")
        x = ds.features[0]
        base = target.posteriors(net, x)[0]
        rng = np.random.default_rng(11)
        acc = np.zeros_like(base)
        for _ in range(1000):
            acc += sh.view_posterior(x, 0, rng)
        assert np.abs(acc / 1000 - base).max() < 0.05

    def test_network_dropout_stays_on_simplex(self, toy_net):
        net, ds, _ = toy_net
        sh = target.build_shadows(net, 0.4, 0.4, "network_dropout")
        rng = np.random.default_rng(5)
        for i in range(20):
            v = sh.view_posterior(ds.features[i], 0, rng)
            assert np.all(v >= 0)
            assert v.sum() == pytest.approx(1.0, abs=1e-9)

    def test_never_mutates_target(self, toy_net):
        net, ds, _ = toy_net
        before = nn.params_digest(net)
        for mode in target.VIEW_MODES:
            sh = target.build_shadows(net, 0.3, 0.6, mode)
            rng = np.random.default_rng(2)
            for i in range(5):
                sh.view_posterior(ds.features[i], 0, rng)
                sh.view_posterior(ds.features[i], 1, rng)
        assert nn.params_digest(net) == before

    def test_rate_validation(self, toy_net):
        net, _, _ = toy_net
        with pytest.raises(ParameterError):
            target.build_shadows(net, 1.0, 0.1)

    def test_equal_rates_still_give_distinct_views(self, toy_net):
        # independent masks make the two views differ even when d1 == d2
        net, ds, _ = toy_net
        for mode in target.VIEW_MODES:
            sh = target.build_shadows(net, 0.5, 0.5, mode)
            vi = sh.view_posterior(ds.features[1], 0, np.random.default_rng(100))
            vj = sh.view_posterior(ds.features[1], 1, np.random.default_rng(101))
            assert not np.array_equal(vi, vj)


class TestProfile:
    def test_accuracy_bounds_validated(self):
        with pytest.raises(ParameterError):
            target.TargetProfile(1.2, 0.5, 10, 0.1)

    def test_gap(self):
        profile = target.TargetProfile(0.9, 0.6, 10, 0.1)
        assert profile.gap == pytest.approx(0.3)
