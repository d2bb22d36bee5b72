"""Back-constraint encoder.

Two single-hidden-layer perceptrons map an observed (masked, one-hot
expanded) data row to the mean and standard deviation of its variational
latent distribution.  Hidden activations are tanh; the mean head is
linear, the std head is a sigmoid clamped to [STD_FLOOR, 1).  Tying the
latent posterior to the data through a shared network keeps nearby rows
nearby in latent space and lets minibatch updates move every row's
embedding at once.
"""

from dataclasses import dataclass
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .errors import InputError

STD_FLOOR = 1e-6
_STD_CEIL = 1.0 - 1e-12


class EncoderParams(NamedTuple):
    """Weights of the mean network (omega_1) and std network (omega_2)."""

    mean_hidden_w: jnp.ndarray
    mean_hidden_b: jnp.ndarray
    mean_out_w: jnp.ndarray
    mean_out_b: jnp.ndarray
    std_hidden_w: jnp.ndarray
    std_hidden_b: jnp.ndarray
    std_out_w: jnp.ndarray
    std_out_b: jnp.ndarray


@dataclass(frozen=True)
class EncoderSpec:
    """Architecture plus weights; input width counts one-hot and mask slots."""

    input_dim: int
    hidden_width: int
    latent_dim: int
    params: EncoderParams


def xavier_init(fan_in, fan_out, rng):
    """Uniform(-r, r) weights with r = sqrt(6 / (fan_in + fan_out))."""
    if fan_in <= 0 or fan_out <= 0:
        raise InputError("fans must be positive")
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=(fan_in, fan_out))


def init_encoder(input_dim, hidden_width, latent_dim, rng):
    """Xavier-initialised weights, zero biases, for both heads."""
    def head():
        return (
            jnp.asarray(xavier_init(input_dim, hidden_width, rng)),
            jnp.zeros(hidden_width),
            jnp.asarray(xavier_init(hidden_width, latent_dim, rng)),
            jnp.zeros(latent_dim),
        )

    mw, mb, mow, mob = head()
    sw, sb, sow, sob = head()
    params = EncoderParams(mw, mb, mow, mob, sw, sb, sow, sob)
    return EncoderSpec(input_dim, hidden_width, latent_dim, params)


def _encode(params, rows):
    hidden_m = jnp.tanh(rows @ params.mean_hidden_w + params.mean_hidden_b)
    mean = hidden_m @ params.mean_out_w + params.mean_out_b
    hidden_s = jnp.tanh(rows @ params.std_hidden_w + params.std_hidden_b)
    std = jax.nn.sigmoid(hidden_s @ params.std_out_w + params.std_out_b)
    return mean, jnp.clip(std, STD_FLOOR, _STD_CEIL)


def encode(spec, rows):
    """Forward pass: rows (or one row) -> (means, stds), stds in [1e-6, 1)."""
    rows = np.asarray(rows, dtype=float)
    single = rows.ndim == 1
    if single:
        rows = rows[None, :]
    if rows.shape[1] != spec.input_dim:
        raise InputError(f"encoder expects width {spec.input_dim}, got {rows.shape[1]}")
    if not np.all(np.isfinite(rows)):
        raise InputError("encoder inputs must be finite")
    mean, std = _encode(spec.params, jnp.asarray(rows))
    mean, std = np.asarray(mean), np.asarray(std)
    return (mean[0], std[0]) if single else (mean, std)
