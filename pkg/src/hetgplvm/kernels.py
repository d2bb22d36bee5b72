"""ARD-RBF kernel and stabilised Cholesky utilities.

The covariance between latent locations ``x1`` and ``x2`` is

    k(x1, x2) = sigma_f^2 * exp(-0.5 * sum_q (x1_q - x2_q)^2 / l_q^2),

with one lengthscale per latent dimension (automatic relevance
determination).  Public functions take and return NumPy arrays; the
underscore-prefixed variants are the JAX implementations used inside the
differentiable objective.
"""

from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np
import scipy.linalg

from .errors import InputError, NumericalError

# Escalation ladder for Cholesky jitter, as multiples of the base jitter
# relative to the mean diagonal: {0, 1, 10, ..., 1e6} * base.
JITTER_BASE = 1e-8
_JITTER_STEPS = 7  # base * 10**k for k = 0..6, capping at 1e-2 for base 1e-8


@dataclass(frozen=True)
class KernelHypers:
    """ARD-RBF hyperparameters: signal variance and per-dimension lengthscales."""

    signal_variance: float
    lengthscales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if not np.isfinite(self.signal_variance) or self.signal_variance <= 0:
            raise InputError("signal_variance must be a positive finite real")
        if ls.ndim != 1 or ls.size == 0 or not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise InputError("lengthscales must be a vector of positive finite reals")

    @property
    def latent_dim(self):
        return self.lengthscales.size


@dataclass(frozen=True)
class CholFactor:
    """Lower-triangular factor of K + jitter_used * I."""

    lower: np.ndarray
    jitter_used: float = 0.0

    def __post_init__(self):
        L = np.asarray(self.lower, dtype=float)
        object.__setattr__(self, "lower", L)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise InputError("Cholesky factor must be square")
        if np.any(np.diag(L) <= 0):
            raise InputError("Cholesky factor must have a strictly positive diagonal")


def _sqdist(XA, XB, log_lengthscales):
    """Scaled squared distances; exact zeros on coincident rows."""
    inv_ls = jnp.exp(-log_lengthscales)
    diff = (XA[:, None, :] - XB[None, :, :]) * inv_ls
    return jnp.sum(diff * diff, axis=-1)


def _gram(XA, XB, log_signal_variance, log_lengthscales):
    d2 = _sqdist(XA, XB, log_lengthscales)
    return jnp.exp(log_signal_variance - 0.5 * d2)


def ard_rbf(x1, x2, hypers):
    """Kernel value for a single pair of latent points."""
    x1 = np.asarray(x1, dtype=float).reshape(-1)
    x2 = np.asarray(x2, dtype=float).reshape(-1)
    if x1.size != x2.size or x1.size != hypers.latent_dim:
        raise InputError(
            f"latent dimensions disagree: {x1.size}, {x2.size}, "
            f"hypers expect {hypers.latent_dim}"
        )
    return float(gram(x1[None, :], x2[None, :], hypers)[0, 0])


def gram(XA, XB, hypers):
    """Cross-covariance matrix with entries ``ard_rbf(XA[i], XB[j], hypers)``."""
    XA = np.atleast_2d(np.asarray(XA, dtype=float))
    XB = np.atleast_2d(np.asarray(XB, dtype=float))
    if XA.shape[1] != hypers.latent_dim or XB.shape[1] != hypers.latent_dim:
        raise InputError(
            f"column counts must equal the latent dimension {hypers.latent_dim}; "
            f"got {XA.shape[1]} and {XB.shape[1]}"
        )
    out = _gram(
        jnp.asarray(XA),
        jnp.asarray(XB),
        jnp.log(hypers.signal_variance),
        jnp.log(jnp.asarray(hypers.lengthscales)),
    )
    return np.asarray(out)


def jittered_cholesky(K, base_jitter=JITTER_BASE):
    """Cholesky of K + jitter*I, escalating jitter until the factorisation succeeds.

    The candidate jitters are {0, base, 10*base, ..., 1e6*base} scaled by the
    mean diagonal of K; the smallest successful value is reported in
    ``jitter_used``.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InputError(f"matrix must be square, got shape {K.shape}")
    scale = max(np.max(np.abs(K)), 1.0)
    asym = np.max(np.abs(K - K.T)) if K.size else 0.0
    if asym > 1e-10 * scale:
        raise InputError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    K = 0.5 * (K + K.T)

    unit = float(np.mean(np.abs(np.diag(K)))) or 1.0
    candidates = [0.0] + [base_jitter * 10.0**k * unit for k in range(_JITTER_STEPS)]
    for jitter in candidates:
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(K.shape[0]))
        except np.linalg.LinAlgError:
            continue
        if np.all(np.diag(L) > 0):
            return CholFactor(lower=L, jitter_used=jitter)
    eigs = np.linalg.eigvalsh(K)
    raise NumericalError(
        "Cholesky failed at maximum jitter "
        f"{candidates[-1]:.3e}; eigenvalue range [{eigs[0]:.3e}, {eigs[-1]:.3e}]"
    )


def chol_solve(factor, B):
    """Solve (K + jitter*I) X = B given the factor of the left-hand side."""
    L = factor.lower
    B = np.asarray(B, dtype=float)
    vector_rhs = B.ndim == 1
    if vector_rhs:
        B = B[:, None]
    if B.shape[0] != L.shape[0]:
        raise InputError(
            f"right-hand side has {B.shape[0]} rows, factor is {L.shape[0]}x{L.shape[0]}"
        )
    X = scipy.linalg.cho_solve((L, True), B)
    return X[:, 0] if vector_rhs else X
