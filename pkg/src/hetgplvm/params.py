"""Model structure and trainable parameters.

``ModelSpec`` fixes the architecture (latent dimension, inducing count,
encoder width, kernel sharing); ``Layout`` is derived from a dataset
schema and records, statically, how columns map onto GP channels so the
objective can be traced once per shape.  ``ModelParams`` is the JAX pytree
of every trainable array.  Positivity-constrained quantities (kernel
hypers, shared likelihood parameters, posterior scale diagonals) are
stored in log-space.
"""

from dataclasses import dataclass
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .errors import ConfigError, InputError
from .likelihoods import num_channels
from .recognition import EncoderParams, init_encoder
from .seeding import substream

KERNEL_SHARED = "shared"
KERNEL_PER_KIND = "per-kind"

# Initial scale of the inducing-posterior Cholesky factor (L = 0.1 * I).
_INIT_SCALE_DIAG = 0.1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture switches; everything data-shaped lives in Layout."""

    latent_dim: int
    n_inducing: int = 32
    hidden_width: int = 30
    mask_inputs: bool = True
    kernel_blocks: str = KERNEL_SHARED
    sigma_x2: float = 1.0

    def __post_init__(self):
        if self.latent_dim < 1 or self.n_inducing < 1 or self.hidden_width < 1:
            raise ConfigError("latent_dim, n_inducing and hidden_width must be >= 1")
        if self.kernel_blocks not in (KERNEL_SHARED, KERNEL_PER_KIND):
            raise ConfigError(
                f"kernel_blocks must be {KERNEL_SHARED!r} or {KERNEL_PER_KIND!r}"
            )
        if self.sigma_x2 <= 0:
            raise ConfigError("sigma_x2 must be positive")


@dataclass(frozen=True)
class KindGroup:
    """Single-channel columns sharing one likelihood family."""

    tag: str
    cols: tuple
    channels: tuple


@dataclass(frozen=True)
class CatGroup:
    """One categorical column: K consecutive softmax channels."""

    col: int
    cardinality: int
    channels: tuple
    eps_offset: int  # offset into the categorical noise slab


@dataclass(frozen=True)
class Layout:
    """Static column-to-channel bookkeeping derived from a schema."""

    tags: tuple
    cards: tuple
    n_channels: int
    groups: tuple
    cat_groups: tuple
    n_cat_channels: int
    block_of_channel: tuple
    n_blocks: int
    gauss_cols: tuple
    beta_cols: tuple
    value_width: int

    @property
    def n_cols(self):
        return len(self.tags)

    def encoder_width(self, mask_inputs):
        return 2 * self.value_width if mask_inputs else self.value_width


def build_layout(schema, kernel_blocks=KERNEL_SHARED):
    schema = tuple(schema)
    if not schema:
        raise InputError("schema has no columns")
    tags = tuple(c.kind.tag for c in schema)
    cards = tuple(c.kind.cardinality for c in schema)
    present = [t for t in ("gaussian", "bernoulli", "beta", "poisson", "categorical")
               if t in tags]
    block_ids = {t: (present.index(t) if kernel_blocks == KERNEL_PER_KIND else 0)
                 for t in present}

    channel_start, n_channels = [], 0
    for col in schema:
        channel_start.append(n_channels)
        n_channels += num_channels(col.kind)

    groups = []
    for tag in present:
        if tag == "categorical":
            continue
        cols = tuple(d for d, t in enumerate(tags) if t == tag)
        groups.append(
            KindGroup(tag, cols, tuple(channel_start[d] for d in cols))
        )

    cat_groups, eps_offset = [], 0
    for d, tag in enumerate(tags):
        if tag != "categorical":
            continue
        k = cards[d]
        cat_groups.append(
            CatGroup(d, k, tuple(range(channel_start[d], channel_start[d] + k)), eps_offset)
        )
        eps_offset += k

    block_of_channel = [0] * n_channels
    for d, tag in enumerate(tags):
        for ch in range(channel_start[d], channel_start[d] + num_channels(schema[d].kind)):
            block_of_channel[ch] = block_ids[tag]

    return Layout(
        tags=tags,
        cards=cards,
        n_channels=n_channels,
        groups=tuple(groups),
        cat_groups=tuple(cat_groups),
        n_cat_channels=eps_offset,
        block_of_channel=tuple(block_of_channel),
        n_blocks=(len(present) if kernel_blocks == KERNEL_PER_KIND else 1),
        gauss_cols=tuple(d for d, t in enumerate(tags) if t == "gaussian"),
        beta_cols=tuple(d for d, t in enumerate(tags) if t == "beta"),
        value_width=sum(cards),
    )


class ModelParams(NamedTuple):
    """Every trainable array, as one pytree."""

    log_signal_variance: jnp.ndarray  # (n_blocks,)
    log_lengthscales: jnp.ndarray     # (n_blocks, Q)
    inducing_inputs: jnp.ndarray      # (M, Q)
    inducing_mean: jnp.ndarray        # (C, M)
    inducing_scale_tril: jnp.ndarray  # (C, M(M+1)/2), diagonal in log-space
    gaussian_log_variance: jnp.ndarray  # (#gaussian columns,)
    beta_log_dispersion: jnp.ndarray    # (#beta columns,)
    encoder: EncoderParams


def n_tril(m):
    return m * (m + 1) // 2


def _tril_template(m, diag_value):
    rows, cols = np.tril_indices(m)
    vec = np.zeros(n_tril(m))
    vec[rows == cols] = diag_value
    return vec


def scale_tril_matrices(tril_vecs, m):
    """Unpack (C, T) packed factors into (C, M, M) with exponentiated diagonals."""
    rows, cols = jnp.tril_indices(m)

    def build(vec):
        L = jnp.zeros((m, m)).at[rows, cols].set(vec)
        return jnp.tril(L, -1) + jnp.diag(jnp.exp(jnp.diag(L)))

    return jax.vmap(build)(tril_vecs)


def param_shapes(layout, spec):
    """Array shapes of every ModelParams leaf, in flattening order."""
    q, m, c = spec.latent_dim, spec.n_inducing, layout.n_channels
    width = layout.encoder_width(spec.mask_inputs)
    h = spec.hidden_width
    return (
        (layout.n_blocks,),
        (layout.n_blocks, q),
        (m, q),
        (c, m),
        (c, n_tril(m)),
        (len(layout.gauss_cols),),
        (len(layout.beta_cols),),
        # encoder leaves: hidden/out weights and biases for both heads
        (width, h), (h,), (h, q), (q,),
        (width, h), (h,), (h, q), (q,),
    )


def flatten_params(params):
    """Concatenate every leaf into one float64 vector (optimiser layout)."""
    leaves = jax.tree_util.tree_leaves(params)
    return jnp.concatenate([jnp.ravel(leaf) for leaf in leaves])


def unflatten_params(flat, layout, spec):
    """Rebuild ModelParams from a flat vector; inverse of flatten_params."""
    shapes = param_shapes(layout, spec)
    leaves, offset = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        leaves.append(jnp.reshape(flat[offset:offset + size], shape))
        offset += size
    return ModelParams(
        *leaves[:7], EncoderParams(*leaves[7:])
    )


def n_params(layout, spec):
    return sum(int(np.prod(s)) for s in param_shapes(layout, spec))


def init_params(layout, spec, seed=0):
    """Default initialisation: unit kernel, zero means, 0.1*I posterior scales,
    N(0, sigma_x2) inducing inputs, Xavier encoder weights."""
    rng = substream(seed, "init")
    q, m, c = spec.latent_dim, spec.n_inducing, layout.n_channels
    z = rng.normal(0.0, np.sqrt(spec.sigma_x2), size=(m, q))
    tril0 = _tril_template(m, np.log(_INIT_SCALE_DIAG))
    enc = init_encoder(layout.encoder_width(spec.mask_inputs), spec.hidden_width, q, rng)
    return ModelParams(
        log_signal_variance=jnp.zeros(layout.n_blocks),
        log_lengthscales=jnp.zeros((layout.n_blocks, q)),
        inducing_inputs=jnp.asarray(z),
        inducing_mean=jnp.zeros((c, m)),
        inducing_scale_tril=jnp.tile(jnp.asarray(tril0), (c, 1)),
        gaussian_log_variance=jnp.zeros(len(layout.gauss_cols)),
        beta_log_dispersion=jnp.full(len(layout.beta_cols), np.log(10.0)),
        encoder=enc.params,
    )
