"""Per-column likelihood catalogue.

Each data column is assigned one of five observation models; a latent GP
channel feeds each distribution parameter through a fixed link:

    gaussian     identity link, shared optimised variance sigma^2
    bernoulli    sigmoid link
    beta         probit link (standard-normal CDF) for the mean,
                 shared optimised inverse dispersion nu; alpha = nu*mu,
                 beta = nu*(1-mu)
    poisson      exponential link
    categorical  softmax over K channels

All but the categorical kind use a single GP channel per column.
"""

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import gammaln, logsumexp, ndtr

from .errors import InputError

TAGS = ("gaussian", "bernoulli", "beta", "poisson", "categorical")

# Open-interval guards: beta observations are clamped into
# [BETA_OBS_EPS, 1 - BETA_OBS_EPS] at data ingestion, and linked means are
# kept away from {0, 1} so shape parameters stay positive.
BETA_OBS_EPS = 1e-6
_MEAN_EPS = 1e-12


@dataclass(frozen=True)
class LikelihoodKind:
    """Distribution tag plus, for categorical columns, the cardinality K."""

    tag: str
    cardinality: int = 1

    def __post_init__(self):
        if self.tag not in TAGS:
            raise InputError(f"unknown likelihood tag {self.tag!r}; expected one of {TAGS}")
        if self.tag == "categorical":
            if self.cardinality < 2:
                raise InputError("categorical cardinality must be at least 2")
        elif self.cardinality != 1:
            raise InputError(f"cardinality must be 1 for tag {self.tag!r}")

    @classmethod
    def parse(cls, text):
        """Parse a schema string: a bare tag or ``categorical:K``."""
        text = text.strip()
        if ":" in text:
            tag, _, card = text.partition(":")
            if tag != "categorical":
                raise InputError(f"only categorical kinds take a cardinality, got {text!r}")
            try:
                k = int(card)
            except ValueError:
                raise InputError(f"bad cardinality in kind string {text!r}") from None
            return cls("categorical", k)
        return cls(text)

    def __str__(self):
        if self.tag == "categorical":
            return f"categorical:{self.cardinality}"
        return self.tag


GAUSSIAN = LikelihoodKind("gaussian")
BERNOULLI = LikelihoodKind("bernoulli")
BETA = LikelihoodKind("beta")
POISSON = LikelihoodKind("poisson")


def categorical(cardinality):
    return LikelihoodKind("categorical", cardinality)


@dataclass(frozen=True)
class SharedLikelihoodParams:
    """Column-level parameters optimised outside the GP: sigma^2 and nu."""

    gaussian_variance: float = 1.0
    beta_dispersion: float = 10.0

    def __post_init__(self):
        if not (np.isfinite(self.gaussian_variance) and self.gaussian_variance > 0):
            raise InputError("gaussian_variance must be positive")
        if not (np.isfinite(self.beta_dispersion) and self.beta_dispersion > 0):
            raise InputError("beta_dispersion must be positive")


def num_channels(kind):
    """GP channels driven by one column: K for categorical, 1 otherwise."""
    return kind.cardinality if kind.tag == "categorical" else 1


# --- JAX log-density kernels (used verbatim inside the objective) ---

_LOG_2PI = float(np.log(2.0 * np.pi))


def _beta_mean(f):
    return jnp.clip(ndtr(f), _MEAN_EPS, 1.0 - _MEAN_EPS)


def _log_pdf_gaussian(y, f, variance):
    return -0.5 * (_LOG_2PI + jnp.log(variance)) - 0.5 * (y - f) ** 2 / variance


def _log_pdf_bernoulli(y, f):
    # y*log(sig(f)) + (1-y)*log(1-sig(f)) == y*f - softplus(f) for y in {0,1}
    return y * f - jax.nn.softplus(f)


def _log_pdf_poisson(y, f):
    return y * f - jnp.exp(f) - gammaln(y + 1.0)


def _log_pdf_beta(y, f, dispersion):
    mu = _beta_mean(f)
    a = dispersion * mu
    b = dispersion * (1.0 - mu)
    log_norm = gammaln(a) + gammaln(b) - gammaln(a + b)
    return (a - 1.0) * jnp.log(y) + (b - 1.0) * jnp.log1p(-y) - log_norm


def _log_pdf_categorical(y, f):
    # y is a 1-based category index; f carries the K logits in its last axis.
    idx = jnp.clip(y.astype(jnp.int32) - 1, 0, f.shape[-1] - 1)
    picked = jnp.take_along_axis(f, idx[..., None], axis=-1)[..., 0]
    return picked - logsumexp(f, axis=-1)


def apply_link(kind, f):
    """Map GP values to the distribution's parameter domain."""
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise InputError("link input must be finite")
    if kind.tag == "gaussian":
        out = f
    elif kind.tag == "bernoulli":
        out = jax.nn.sigmoid(jnp.asarray(f))
    elif kind.tag == "poisson":
        out = jnp.exp(jnp.asarray(f))
    elif kind.tag == "beta":
        out = _beta_mean(jnp.asarray(f))
    else:
        if f.shape[-1] != kind.cardinality:
            raise InputError(
                f"categorical link expects {kind.cardinality} logits, got {f.shape[-1]}"
            )
        out = jax.nn.softmax(jnp.asarray(f), axis=-1)
    return np.asarray(out, dtype=float)


def _check_support(kind, y):
    if kind.tag == "bernoulli":
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise InputError("bernoulli observations must be 0 or 1")
    elif kind.tag == "poisson":
        if np.any(y < 0) or not np.all(y == np.round(y)):
            raise InputError("poisson observations must be non-negative integers")
    elif kind.tag == "beta":
        if np.any(y <= 0) or np.any(y >= 1):
            raise InputError(
                "beta observations must lie strictly inside (0, 1); "
                "clamp boundary values at ingestion"
            )
    elif kind.tag == "categorical":
        k = kind.cardinality
        if np.any(y != np.round(y)) or np.any(y < 1) or np.any(y > k):
            raise InputError(f"categorical observations must be integers in 1..{k}")


def log_pdf(kind, y, f, shared=None):
    """Log-density of ``y`` under the linked likelihood at GP value(s) ``f``.

    ``y`` and ``f`` broadcast elementwise; for categorical columns ``f``
    carries the K logits in its trailing axis.
    """
    shared = shared or SharedLikelihoodParams()
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(f))):
        raise InputError("log_pdf inputs must be finite")
    _check_support(kind, y)
    yj, fj = jnp.asarray(y), jnp.asarray(f)
    if kind.tag == "gaussian":
        out = _log_pdf_gaussian(yj, fj, shared.gaussian_variance)
    elif kind.tag == "bernoulli":
        out = _log_pdf_bernoulli(yj, fj)
    elif kind.tag == "poisson":
        out = _log_pdf_poisson(yj, fj)
    elif kind.tag == "beta":
        out = _log_pdf_beta(yj, fj, shared.beta_dispersion)
    else:
        if f.shape[-1] != kind.cardinality:
            raise InputError(
                f"categorical log_pdf expects {kind.cardinality} logits, got {f.shape[-1]}"
            )
        out = _log_pdf_categorical(yj, fj)
    arr = np.asarray(out, dtype=float)
    return float(arr) if arr.ndim == 0 else arr
