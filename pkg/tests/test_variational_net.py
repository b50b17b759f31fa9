"""Variational network: planning, sampling, forward, KL, objective, checkpoints."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from bnnood import core_math, variational_net as vn
from bnnood.errors import ConfigError, DataError


def small_params(seed=0, widths=(2, 4, 2), prior_variance=0.01):
    return vn.init_params(vn.mlp(widths), seed, prior_variance)


class TestPlanning:
    def test_mlp_weight_count(self):
        # 2-32-32-3: (2*32+32) + (32*32+32) + (32*3+3)
        _, count, classes = vn.plan_layers(vn.mlp([2, 32, 32, 3]), (2,))
        assert count == 96 + 1056 + 99
        assert classes == 3

    def test_dimension_chain_enforced(self):
        bad = (vn.dense(2, 4), vn.dense(5, 3))
        with pytest.raises(ConfigError):
            vn.plan_layers(bad, (2,))

    def test_input_shape_mismatch(self):
        with pytest.raises(ConfigError):
            vn.plan_layers(vn.mlp([2, 3]), (4,))

    def test_final_layer_must_be_dense(self):
        arch = (vn.dense(2, 3), vn.softplus_layer())
        with pytest.raises(ConfigError):
            vn.plan_layers(arch, (2,))

    def test_conv_stack_shapes(self):
        arch = (vn.conv2d(1, 6, 5), vn.softplus_layer(), vn.maxpool(2),
                vn.conv2d(6, 16, 5), vn.softplus_layer(), vn.maxpool(2),
                vn.dense(256, 10))
        planned, count, classes = vn.plan_layers(arch, (1, 28, 28))
        assert planned[0].out_shape == (6, 24, 24)
        assert planned[2].out_shape == (6, 12, 12)
        assert planned[3].out_shape == (16, 8, 8)
        assert planned[5].out_shape == (16, 4, 4)
        assert classes == 10
        assert count == (6 * 25 + 6) + (16 * 6 * 25 + 16) + (256 * 10 + 10)

    def test_maxpool_must_divide(self):
        arch = (vn.conv2d(1, 2, 3), vn.maxpool(4), vn.dense(2, 2))
        with pytest.raises(ConfigError):
            vn.plan_layers(arch, (1, 9, 9))


class TestInitParams:
    def test_deterministic(self):
        a = small_params(seed=42)
        b = small_params(seed=42)
        assert np.array_equal(a.mu, b.mu)
        assert np.array_equal(a.rho, b.rho)

    def test_seed_changes_values(self):
        assert not np.array_equal(small_params(0).mu, small_params(1).mu)

    def test_init_moments(self):
        # law of large numbers over >= 1e5 weights
        params = vn.init_params(vn.mlp([300, 340, 10]), seed=9)
        assert params.weight_count >= 100_000
        assert abs(params.mu.mean()) < 0.01
        assert_allclose(params.mu.std(), 0.1, rtol=0.05)
        assert_allclose(params.rho.mean(), -5.0, atol=0.01)
        assert_allclose(params.rho.std(), 0.1, rtol=0.05)

    def test_initial_sigma_near_softplus_of_minus_five(self):
        params = small_params(seed=3)
        assert_allclose(params.sigma(), core_math.softplus(-5.0), rtol=0.25)


class TestSampleWeights:
    def test_deterministic_per_stream(self):
        params = small_params()
        a = vn.sample_weights(params, np.random.default_rng(5))
        b = vn.sample_weights(params, np.random.default_rng(5))
        assert np.array_equal(a.values, b.values)

    def test_zero_noise_limit(self):
        params = small_params()
        params.rho[:] = -40.0  # softplus(-40) ~ 4e-18
        sample = vn.sample_weights(params, np.random.default_rng(0))
        assert_allclose(sample.values, params.mu, atol=1e-15)

    def test_empirical_variance(self):
        params = small_params(seed=11)
        draws = np.stack([
            vn.sample_weights(params, np.random.default_rng(i)).values
            for i in range(2000)
        ])
        # pooled over 2000 draws x 22 weights > 1e4 samples per band
        assert_allclose(draws.std(axis=0), params.sigma(), rtol=0.05)
        assert_allclose(draws.mean(axis=0), params.mu, atol=5e-4)


class TestForward:
    def test_zero_weights_zero_logits(self):
        params = small_params()
        sample = vn.WeightSample(np.zeros(params.weight_count),
                                 params.architecture, params.input_shape)
        out = vn.forward(sample, np.ones((3, 2)))
        assert np.array_equal(out, np.zeros((3, 2)))

    def test_identity_dense_layer(self):
        arch = (vn.dense(2, 2),)
        w = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])  # W = I, b = 0
        sample = vn.WeightSample(w, arch, (2,))
        assert_allclose(vn.forward(sample, np.array([3.5, -1.25])),
                        [3.5, -1.25], rtol=0, atol=0)

    def test_single_input_drops_batch_axis(self):
        params = small_params()
        sample = vn.sample_weights(params, np.random.default_rng(1))
        single = vn.forward(sample, np.array([0.3, -0.7]))
        batch = vn.forward(sample, np.array([[0.3, -0.7]]))
        assert single.shape == (2,)
        assert_allclose(single, batch[0], rtol=0, atol=0)

    def test_against_straight_line_reimplementation(self):
        # independent loop-based arithmetic for a 3-4-2 net
        params = vn.init_params(vn.mlp([3, 4, 2]), seed=8)
        sample = vn.sample_weights(params, np.random.default_rng(2))
        w = sample.values
        w1 = w[0:12].reshape(3, 4)
        b1 = w[12:16]
        w2 = w[16:24].reshape(4, 2)
        b2 = w[24:26]
        rng = np.random.default_rng(3)
        x = rng.standard_normal((6, 3))
        expected = np.empty((6, 2))
        for n in range(6):
            hidden = np.empty(4)
            for j in range(4):
                acc = b1[j]
                for i in range(3):
                    acc += x[n, i] * w1[i, j]
                hidden[j] = np.log1p(np.exp(acc)) if acc < 30 else acc
            for k in range(2):
                acc = b2[k]
                for j in range(4):
                    acc += hidden[j] * w2[j, k]
                expected[n, k] = acc
        assert_allclose(vn.forward(sample, x), expected, atol=1e-10)

    def test_shape_mismatch_rejected(self):
        params = small_params()
        sample = vn.sample_weights(params, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            vn.forward(sample, np.ones((3, 5)))

    def test_conv_forward_matches_naive_loops(self):
        arch = (vn.conv2d(2, 3, 2, stride=1), vn.dense(3 * 2 * 2, 2))
        params = vn.init_params(arch, seed=4, input_shape=(2, 3, 3))
        sample = vn.sample_weights(params, np.random.default_rng(5))
        w = sample.values
        kernel = w[0:24].reshape(3, 2, 2, 2)
        bias = w[24:27]
        x = np.random.default_rng(6).standard_normal((2, 2, 3, 3))
        conv = np.empty((2, 3, 2, 2))
        for n in range(2):
            for o in range(3):
                for r in range(2):
                    for c in range(2):
                        acc = bias[o]
                        for ch in range(2):
                            for i in range(2):
                                for j in range(2):
                                    acc += kernel[o, ch, i, j] * x[n, ch, r + i, c + j]
                        conv[n, o, r, c] = acc
        flat = conv.reshape(2, -1)
        w2 = w[27:27 + 24].reshape(12, 2)
        b2 = w[27 + 24:]
        assert_allclose(vn.forward(sample, x), flat @ w2 + b2, atol=1e-12)


class TestKlToPrior:
    def test_zero_when_matching_prior(self):
        params = small_params(prior_variance=0.04)
        params.mu[:] = 0.0
        params.rho[:] = np.log(np.expm1(0.2))  # sigma = sqrt(0.04)
        assert_allclose(vn.kl_to_prior(params), 0.0, atol=1e-12)

    def test_single_weight_spot_value(self):
        # mu 0.1, sigma 0.1, prior std 0.1 -> 0 + (0.01 + 0.01)/0.02 - 0.5
        arch = (vn.dense(1, 1),)
        params = vn.VariationalParams(
            np.array([0.1, 0.0]), np.log(np.expm1(np.array([0.1, 0.1]))),
            arch, (1,), prior_variance=0.01)
        # closed form over both weights, then subtract the bias contribution
        both = vn.kl_to_prior(params)
        second_only = 0.5 * np.log(0.01) - np.log(0.1) + (0.01 + 0.0) / 0.02 - 0.5
        assert_allclose(both - second_only, 0.5, rtol=1e-12)

    def test_nonnegative_for_random_params(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            params = small_params(seed=int(rng.integers(1 << 30)))
            params.mu += rng.standard_normal(params.weight_count)
            params.rho += rng.standard_normal(params.weight_count)
            assert vn.kl_to_prior(params) >= 0.0

    def test_matches_monte_carlo(self):
        params = small_params(seed=13)
        analytic = vn.kl_to_prior(params)
        rng = np.random.default_rng(99)
        t = 100_000
        sigma = params.sigma()
        eps = rng.standard_normal((t, params.weight_count))
        w = params.mu + sigma * eps
        log_q = (-0.5 * np.log(2 * np.pi) - np.log(sigma)
                 - 0.5 * eps ** 2).sum(axis=1)
        s2 = params.prior_variance
        log_p = (-0.5 * np.log(2 * np.pi * s2) - 0.5 * w ** 2 / s2).sum(axis=1)
        mc = float(np.mean(log_q - log_p))
        assert_allclose(mc, analytic, rtol=0.01)


class TestElboLoss:
    def test_zero_pi_perfect_batch(self):
        # huge correct logit -> softmax prob 1 -> loss 0 when pi = 0
        arch = (vn.dense(1, 2),)
        params = vn.VariationalParams(
            np.array([50.0, -50.0, 0.0, 0.0]), np.full(4, -40.0), arch, (1,))
        loss, _, _ = vn.elbo_loss(params, np.ones((4, 1)),
                                  np.zeros(4, dtype=np.int64), 0.0,
                                  np.random.default_rng(0))
        assert_allclose(loss, 0.0, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        params = small_params(seed=21)
        rng = np.random.default_rng(22)
        x = rng.standard_normal((6, 2))
        y = rng.integers(0, 2, 6)
        eps = rng.standard_normal((1, params.weight_count))
        step = 1e-5
        _, g_mu, g_rho = vn.elbo_loss_fixed_noise(params, x, y, 0.1, eps)
        for vec, grad in ((params.mu, g_mu), (params.rho, g_rho)):
            for i in range(vec.shape[0]):
                orig = vec[i]
                vec[i] = orig + step
                up, _, _ = vn.elbo_loss_fixed_noise(params, x, y, 0.1, eps)
                vec[i] = orig - step
                down, _, _ = vn.elbo_loss_fixed_noise(params, x, y, 0.1, eps)
                vec[i] = orig
                fd = (up - down) / (2 * step)
                assert abs(fd - grad[i]) <= 1e-4 * max(abs(fd), abs(grad[i]), 1e-6)

    def test_loss_decreases_on_separable_data(self):
        from bnnood import trainer
        params = small_params(seed=30)
        rng = np.random.default_rng(31)
        x = np.concatenate([rng.standard_normal((40, 2)) * 0.3 + [2, 0],
                            rng.standard_normal((40, 2)) * 0.3 + [-2, 0]])
        y = np.repeat(np.array([0, 1]), 40)
        state_mu = trainer.AdamState.zeros(params.weight_count)
        state_rho = trainer.AdamState.zeros(params.weight_count)
        mc = np.random.default_rng(32)
        losses = []
        for _ in range(50):
            loss, g_mu, g_rho = vn.elbo_loss(params, x, y, 0.1, mc)
            params.mu -= trainer.adam_step(state_mu, g_mu, 0.01)
            params.rho -= trainer.adam_step(state_rho, g_rho, 0.01)
            losses.append(loss)
        assert np.mean(losses[-10:]) < 0.5 * np.mean(losses[:10])

    def test_label_out_of_range(self):
        params = small_params()
        with pytest.raises(ConfigError):
            vn.elbo_loss(params, np.ones((2, 2)), np.array([0, 2]), 0.1,
                         np.random.default_rng(0))

    def test_multi_mc_averages(self):
        params = small_params(seed=40)
        rng = np.random.default_rng(41)
        x = rng.standard_normal((5, 2))
        y = rng.integers(0, 2, 5)
        eps = rng.standard_normal((3, params.weight_count))
        loss3, gmu3, _ = vn.elbo_loss_fixed_noise(params, x, y, 0.2, eps)
        singles = [vn.elbo_loss_fixed_noise(params, x, y, 0.2, eps[i:i + 1])
                   for i in range(3)]
        assert_allclose(loss3, np.mean([s[0] for s in singles]), rtol=1e-12)
        assert_allclose(gmu3, np.mean([s[1] for s in singles], axis=0), rtol=1e-9)

    def test_negative_pi_rejected(self):
        params = small_params()
        with pytest.raises(ConfigError):
            vn.elbo_loss(params, np.ones((1, 2)), np.array([0]), -0.1,
                         np.random.default_rng(0))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        params = small_params(seed=50)
        path = tmp_path / "model.bin"
        vn.save_checkpoint(params, path, config_hash="abc123")
        loaded, header = vn.load_checkpoint(path)
        assert np.array_equal(loaded.mu, params.mu)
        assert np.array_equal(loaded.rho, params.rho)
        assert loaded.architecture == params.architecture
        assert loaded.input_shape == params.input_shape
        assert loaded.prior_variance == params.prior_variance
        assert header["config_hash"] == "abc123"

    def test_repeated_saves_identical_bytes(self, tmp_path):
        params = small_params(seed=51)
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        vn.save_checkpoint(params, a, "h")
        vn.save_checkpoint(params, b, "h")
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(DataError):
            vn.load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        params = small_params(seed=52)
        path = tmp_path / "model.bin"
        vn.save_checkpoint(params, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(DataError):
            vn.load_checkpoint(path)
