"""Variational families and sparse-GP conditional moments.

The latent posterior factorises entrywise, q(x_{n,q}) = N(m_{n,q},
s_{n,q}^2); each GP channel keeps a Gaussian posterior N(mu, Sigma) over
its M inducing outputs.  Marginalising the inducing outputs gives the
per-point channel distribution q(f_n | X) = N(a_n, b_n^2) with

    a = K_NM K_MM^{-1} mu
    b^2 = diag(K_NN) + diag(K_NM K_MM^{-1} (Sigma - K_MM) K_MM^{-1} K_MN)

computed row-wise in O(N M^2) without forming any N x N matrix.
"""

from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np
from jax.scipy.linalg import solve_triangular

from .errors import InputError, NumericalError
from .kernels import _gram, gram, jittered_cholesky

# b^2 entries may round slightly negative; anything below this is a bug.
_B2_TOLERANCE = -1e-8


@dataclass(frozen=True)
class LatentPrior:
    variance: float = 1.0

    def __post_init__(self):
        if self.variance <= 0:
            raise InputError("latent prior variance must be positive")


@dataclass(frozen=True)
class LatentPosterior:
    """Entrywise means and standard deviations of q(X)."""

    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        stds = np.asarray(self.stds, dtype=float)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)
        if means.shape != stds.shape:
            raise InputError("means and stds must share a shape")
        if np.any(stds <= 0):
            raise InputError("stds must be strictly positive")


@dataclass(frozen=True)
class InducingInputs:
    Z: np.ndarray

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        object.__setattr__(self, "Z", Z)
        if len(np.unique(Z, axis=0)) != Z.shape[0]:
            raise InputError("inducing inputs must have distinct rows")


@dataclass(frozen=True)
class InducingChannel:
    """Posterior N(mu, Sigma) for one channel; Sigma held by its Cholesky factor."""

    mu: np.ndarray
    sigma_chol: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        L = np.asarray(self.sigma_chol, dtype=float)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma_chol", L)
        if L.ndim != 2 or L.shape[0] != L.shape[1] or L.shape[0] != mu.size:
            raise InputError("sigma_chol must be square and match mu's length")
        if np.any(np.diag(L) <= 0):
            raise InputError("sigma_chol must have a strictly positive diagonal")


# --- JAX kernels ---


def _kl_x_terms(means, stds, sigma_x2):
    """Entrywise KL(N(m, s^2) || N(0, sigma_x2))."""
    var_ratio = (stds**2 + means**2) / sigma_x2
    return 0.5 * (jnp.log(sigma_x2) - 2.0 * jnp.log(stds) + var_ratio - 1.0)


def _kl_u_single(mu, sigma_tril, prior_chol):
    m = mu.shape[0]
    alpha = solve_triangular(prior_chol, mu, lower=True)
    half = solve_triangular(prior_chol, sigma_tril, lower=True)
    logdet_prior = 2.0 * jnp.sum(jnp.log(jnp.diag(prior_chol)))
    logdet_post = 2.0 * jnp.sum(jnp.log(jnp.diag(sigma_tril)))
    return 0.5 * (
        jnp.sum(half**2) + jnp.sum(alpha**2) - m + logdet_prior - logdet_post
    )


def _block_moments(X, Z, log_sf2, log_ls, mus, sigma_trils, jitter):
    """Moments for all channels of one kernel block.

    mus: (C_b, M); sigma_trils: (C_b, M, M).  Returns a, b2 of shape (C_b, N)
    and the prior Cholesky factor of K_MM + jitter*I.
    """
    m = Z.shape[0]
    kmm = _gram(Z, Z, log_sf2, log_ls) + jitter * jnp.eye(m)
    lmm = jnp.linalg.cholesky(kmm)
    knm = _gram(X, Z, log_sf2, log_ls)
    w = solve_triangular(lmm, knm.T, lower=True)          # (M, N)
    a_mid = solve_triangular(lmm.T, w, lower=False)       # (M, N) = Kmm^{-1} Kmn
    a = mus @ a_mid                                       # (C_b, N)
    prior_diag = jnp.exp(log_sf2) - jnp.sum(w**2, axis=0)  # (N,)
    half = jnp.einsum("cmk,mn->ckn", sigma_trils, a_mid)   # Sigma^{1/2,T} Kmm^{-1} Kmn
    b2 = prior_diag[None, :] + jnp.sum(half**2, axis=1)
    return a, b2, lmm


# --- public surface ---


def kl_x(q, prior=None):
    """KL(q(X) || p(X)) summed over every latent entry; >= 0."""
    prior = prior or LatentPrior()
    terms = _kl_x_terms(jnp.asarray(q.means), jnp.asarray(q.stds), prior.variance)
    return float(jnp.sum(terms))


def kl_u(channel, prior_factor):
    """KL(N(mu, Sigma) || N(0, K)) for one channel, K given by its factor."""
    if prior_factor.lower.shape[0] != channel.mu.size:
        raise InputError("prior factor and channel dimensions disagree")
    return float(
        _kl_u_single(
            jnp.asarray(channel.mu),
            jnp.asarray(channel.sigma_chol),
            jnp.asarray(prior_factor.lower),
        )
    )


def sample_latents(q, eps):
    """Reparameterised draw m + s * eps for a standard-normal eps."""
    eps = np.asarray(eps, dtype=float)
    if eps.shape != q.means.shape:
        raise InputError("eps shape must match the posterior")
    return q.means + q.stds * eps


def channel_moments(X, inducing, channel, hypers, jitter=None, validate=True):
    """Per-row conditional moments (a, b) of q(f | X) for one channel."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = inducing.Z
    if X.shape[1] != Z.shape[1] or X.shape[1] != hypers.latent_dim:
        raise InputError("latent dimensions of X, Z and hypers disagree")
    if channel.mu.size != Z.shape[0]:
        raise InputError("channel dimension must match the inducing count")
    if jitter is None:
        jitter = jittered_cholesky(gram(Z, Z, hypers)).jitter_used
    a, b2, _ = _block_moments(
        jnp.asarray(X),
        jnp.asarray(Z),
        jnp.log(hypers.signal_variance),
        jnp.log(jnp.asarray(hypers.lengthscales)),
        jnp.asarray(channel.mu)[None, :],
        jnp.asarray(channel.sigma_chol)[None, :, :],
        jitter,
    )
    a = np.asarray(a)[0]
    b2 = np.asarray(b2)[0]
    if validate and np.any(b2 < _B2_TOLERANCE):
        raise NumericalError(
            f"conditional variance fell below tolerance: min b^2 = {b2.min():.3e}"
        )
    return a, np.sqrt(np.maximum(b2, 0.0))
