import numpy as np
import pytest

from calseg.data import FeatureStack, ImageMap
from calseg.errors import ConfigError
from calseg.inference import binarize, mc_ensemble
from calseg.network import NetConfig, init_params
from calseg.seeding import split_seed

TINY = NetConfig(encoder_widths=(2, 3, 4, 5, 6))


def stack(rng, size=16):
    return FeatureStack(rng.uniform(0, 1, size=(13, size, size)).astype(np.float32))


class TestMcEnsemble:
    def test_single_sample_has_zero_uncertainty(self, rng):
        net = init_params(TINY, seed=0)
        result = mc_ensemble(net, stack(rng), n=1, seed=4)
        assert (result.uncertainty.values == 0.0).all()

    def test_zero_sigma_net_collapses_to_deterministic(self, rng):
        net = init_params(TINY, seed=0)
        for block in net.decoder:
            block.flipout.rho_kernel.value = np.full_like(
                block.flipout.rho_kernel.value, -40.0)
            block.flipout.rho_bias.value = np.full_like(
                block.flipout.rho_bias.value, -40.0)
        s = stack(rng)
        result = mc_ensemble(net, s, n=5, seed=1)
        assert float(result.uncertainty.values.max()) < 1e-10
        reference = net.forward_deterministic(s.channels[None], mode="eval")
        np.testing.assert_allclose(result.probability.values,
                                   reference.value[0, 0], atol=1e-6)

    def test_matches_store_all_oracle(self, rng):
        net = init_params(TINY, seed=5)
        s = stack(rng)
        result = mc_ensemble(net, s, n=12, seed=99)
        samples = []
        for i in range(12):
            out = net.forward_flipout(s.channels[None], mode="eval",
                                      rng=np.random.default_rng(split_seed(99, i)))
            samples.append(out.value[0, 0].astype(np.float64))
        samples = np.stack(samples)
        np.testing.assert_allclose(result.probability.values, samples.mean(axis=0),
                                   atol=1e-6)
        np.testing.assert_allclose(result.uncertainty.values, samples.var(axis=0),
                                   atol=1e-6)

    def test_probability_and_uncertainty_bounds(self, rng):
        net = init_params(TINY, seed=2)
        result = mc_ensemble(net, stack(rng), n=8, seed=3)
        prob = result.probability.values
        unc = result.uncertainty.values
        assert (prob >= 0.0).all() and (prob <= 1.0).all()
        assert (unc >= 0.0).all() and (unc <= 0.25 + 1e-7).all()

    def test_deterministic_given_seed(self, rng):
        net = init_params(TINY, seed=2)
        s = stack(rng)
        a = mc_ensemble(net, s, n=6, seed=10)
        b = mc_ensemble(net, s, n=6, seed=10)
        assert a.probability.values.tobytes() == b.probability.values.tobytes()
        assert a.uncertainty.values.tobytes() == b.uncertainty.values.tobytes()

    def test_wider_posterior_does_not_reduce_uncertainty(self, rng):
        net = init_params(TINY, seed=7)
        s = stack(rng)
        base = mc_ensemble(net, s, n=10, seed=1).mean_uncertainty()
        for block in net.decoder:
            sigma = np.log1p(np.exp(block.flipout.rho_kernel.value.astype(np.float64)))
            widened = np.log(np.expm1(np.minimum(sigma * 10.0, 30.0)))
            block.flipout.rho_kernel.value = widened.astype(np.float32)
        wide = mc_ensemble(net, s, n=10, seed=1).mean_uncertainty()
        assert wide >= base

    def test_rejects_non_positive_count(self, rng):
        with pytest.raises(ConfigError):
            mc_ensemble(init_params(TINY, seed=0), stack(rng), n=0, seed=0)


class TestBinarize:
    def test_below_threshold_all_zero(self):
        mask = binarize(ImageMap(np.full((3, 3), 0.4, dtype=np.float32)), 0.5)
        assert mask.values.sum() == 0

    def test_extreme_thresholds(self, rng):
        prob = ImageMap(rng.uniform(0.05, 0.95, size=(5, 5)).astype(np.float32))
        assert binarize(prob, 0.0).values.all()
        assert not binarize(prob, 1.0).values.any()

    def test_monotone_in_threshold(self, rng):
        for _ in range(20):
            prob = ImageMap(rng.uniform(size=(6, 6)).astype(np.float32))
            lo_t, hi_t = sorted(rng.uniform(size=2))
            low = binarize(prob, lo_t).values
            high = binarize(prob, hi_t).values
            assert not (high & ~low).any()  # raising threshold adds nothing
