import math

import jax
import jax.numpy as jnp
import numpy as np
import numpy.testing as npt
import pytest

from hetgplvm import InputError, encode, init_encoder, xavier_init
from hetgplvm.recognition import EncoderParams, EncoderSpec, _encode


class TestXavierInit:
    def test_entries_within_bound(self, rng):
        w = xavier_init(20, 12, rng)
        limit = math.sqrt(6.0 / 32.0)
        assert w.shape == (20, 12)
        assert np.all(np.abs(w) <= limit)

    def test_same_seed_reproduces(self):
        a = xavier_init(7, 5, np.random.default_rng(42))
        b = xavier_init(7, 5, np.random.default_rng(42))
        npt.assert_array_equal(a, b)

    def test_moments_match_uniform_law(self):
        # Var(U(-r, r)) = r^2 / 3 = 2 / (fan_in + fan_out); range^2 / 12 check
        fan_in = fan_out = 300
        w = xavier_init(fan_in, fan_out, np.random.default_rng(1))
        r = math.sqrt(6.0 / (fan_in + fan_out))
        assert abs(w.mean()) < 0.01
        expected_var = (2 * r) ** 2 / 12.0
        assert expected_var == pytest.approx(2.0 / (fan_in + fan_out), rel=1e-12)
        assert w.var() == pytest.approx(expected_var, rel=0.1)

    def test_bad_fans(self, rng):
        with pytest.raises(InputError):
            xavier_init(0, 3, rng)


def _zero_spec(input_dim=3, hidden=4, q=2):
    zeros = EncoderParams(
        jnp.zeros((input_dim, hidden)), jnp.zeros(hidden),
        jnp.zeros((hidden, q)), jnp.zeros(q),
        jnp.zeros((input_dim, hidden)), jnp.zeros(hidden),
        jnp.zeros((hidden, q)), jnp.zeros(q),
    )
    return EncoderSpec(input_dim, hidden, q, zeros)


class TestEncode:
    def test_zero_weights(self):
        spec = _zero_spec()
        mean, std = encode(spec, np.array([0.4, -1.0, 2.0]))
        npt.assert_array_equal(mean, np.zeros(2))
        npt.assert_allclose(std, np.full(2, 0.5), atol=0)

    def test_scalar_network_by_hand(self):
        # one input, one hidden unit, one output; all weights 1, biases 0
        ones = EncoderParams(
            jnp.ones((1, 1)), jnp.zeros(1), jnp.ones((1, 1)), jnp.zeros(1),
            jnp.ones((1, 1)), jnp.zeros(1), jnp.ones((1, 1)), jnp.zeros(1),
        )
        spec = EncoderSpec(1, 1, 1, ones)
        mean, std = encode(spec, np.array([0.3]))
        h = math.tanh(0.3)
        assert mean[0] == pytest.approx(h, abs=1e-15)
        assert std[0] == pytest.approx(1.0 / (1.0 + math.exp(-h)), abs=1e-15)

    def test_batch_equals_row_by_row(self, rng):
        # row independence; tolerance covers GEMM-shape-dependent rounding
        spec = init_encoder(5, 6, 2, rng)
        rows = rng.normal(size=(10, 5))
        batch_mean, batch_std = encode(spec, rows)
        for i in range(10):
            m, s = encode(spec, rows[i])
            npt.assert_allclose(batch_mean[i], m, rtol=1e-14, atol=1e-15)
            npt.assert_allclose(batch_std[i], s, rtol=1e-14, atol=1e-15)

    def test_deterministic_and_input_tied(self, rng):
        spec = init_encoder(4, 5, 3, rng)
        row = rng.normal(size=4)
        m1, s1 = encode(spec, row)
        m2, s2 = encode(spec, row.copy())
        npt.assert_array_equal(m1, m2)
        npt.assert_array_equal(s1, s2)

    def test_std_range(self, rng):
        spec = init_encoder(4, 5, 2, rng)
        rows = rng.normal(scale=50.0, size=(500, 4))
        _, std = encode(spec, rows)
        assert np.all(std >= 1e-6)
        assert np.all(std < 1.0)

    def test_width_mismatch_and_non_finite(self, rng):
        spec = init_encoder(4, 5, 2, rng)
        with pytest.raises(InputError):
            encode(spec, np.zeros(3))
        with pytest.raises(InputError):
            encode(spec, np.array([1.0, np.nan, 0.0, 0.0]))

    def test_gradient_matches_finite_differences(self, rng):
        # scalar readout of the encoder outputs, differentiated through every
        # weight, against central differences
        spec = init_encoder(3, 4, 2, rng)
        rows = jnp.asarray(rng.normal(size=(5, 3)))
        coef_m = jnp.asarray(rng.normal(size=(5, 2)))
        coef_s = jnp.asarray(rng.normal(size=(5, 2)))

        def scalar(params):
            mean, std = _encode(params, rows)
            return jnp.sum(coef_m * mean) + jnp.sum(coef_s * std)

        grads = jax.grad(scalar)(spec.params)
        leaves, _ = jax.tree_util.tree_flatten(spec.params)
        grad_leaves, _ = jax.tree_util.tree_flatten(grads)
        h = 1e-5
        for leaf_idx, (leaf, grad_leaf) in enumerate(zip(leaves, grad_leaves)):
            flat = np.ravel(np.asarray(leaf))
            for j in range(flat.size):
                def perturbed(delta):
                    bumped = flat.copy()
                    bumped[j] += delta
                    new_leaves = list(leaves)
                    new_leaves[leaf_idx] = jnp.asarray(bumped.reshape(leaf.shape))
                    return float(scalar(EncoderParams(*new_leaves)))

                numeric = (perturbed(h) - perturbed(-h)) / (2 * h)
                analytic = float(np.ravel(np.asarray(grad_leaf))[j])
                assert abs(analytic - numeric) / max(abs(analytic), 1e-8) < 1e-4
