"""Gauss-Hermite quadrature for expected log-likelihoods.

A J-node rule integrates polynomials of degree <= 2J-1 exactly against the
weight exp(-t^2).  For a channel whose marginal is N(f | a, b^2), the
expectation of log p(y|f) is approximated by

    E[log p] ~= (1/sqrt(pi)) * sum_j w_j log p(y | a + sqrt(2) b t_j),

the standard change of variables f = a + sqrt(2) b t.  Nodes and weights
come from the symmetric tridiagonal (Golub-Welsch) eigenproblem, which is
stable for all supported orders.
"""

from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np
import scipy.linalg

from .errors import InputError
from .likelihoods import (
    SharedLikelihoodParams,
    _log_pdf_bernoulli,
    _log_pdf_beta,
    _log_pdf_gaussian,
    _log_pdf_poisson,
    log_pdf,
)

MAX_ORDER = 64
_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_PI = float(1.0 / np.sqrt(np.pi))


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes (ascending, symmetric about 0) and positive weights summing to sqrt(pi)."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray


def gh_rule(order):
    """Gauss-Hermite rule of the given order (physicists' convention)."""
    if not 1 <= order <= MAX_ORDER:
        raise InputError(f"quadrature order must be in 1..{MAX_ORDER}, got {order}")
    if order == 1:
        return QuadratureRule(1, np.zeros(1), np.array([np.sqrt(np.pi)]))
    off_diag = np.sqrt(np.arange(1, order) / 2.0)
    nodes, vecs = scipy.linalg.eigh_tridiagonal(np.zeros(order), off_diag)
    weights = np.sqrt(np.pi) * vecs[0] ** 2
    # enforce the exact symmetry the eigensolver only delivers to rounding
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    return QuadratureRule(order, nodes, weights)


def _quad_expect(log_pdf_at, a, b, nodes, weights):
    """Quadrature of ``log_pdf_at(f)`` over f ~ N(a, b^2); broadcasts over a, b."""
    f = a[..., None] + _SQRT2 * b[..., None] * nodes
    lp = log_pdf_at(f)
    return _INV_SQRT_PI * jnp.sum(lp * weights, axis=-1)


def expected_loglik(kind, y, a, b, shared=None, rule=None):
    """E_{N(f|a,b^2)}[log p(y|f)] by Gauss-Hermite quadrature.

    ``y``, ``a`` and ``b`` broadcast elementwise.  Categorical columns couple
    K channels through the softmax, so the one-dimensional rule does not
    apply; their expectations are estimated by sampling in the objective.
    """
    if kind.tag == "categorical":
        raise InputError("categorical expectations are estimated by sampling, not quadrature")
    shared = shared or SharedLikelihoodParams()
    rule = rule or gh_rule(3)
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(b < 0):
        raise InputError("channel standard deviations must be non-negative")
    # reuse the validation in log_pdf before entering the JAX path
    log_pdf(kind, y, a, shared)

    yj = jnp.asarray(y)[..., None]
    if kind.tag == "gaussian":
        fn = lambda f: _log_pdf_gaussian(yj, f, shared.gaussian_variance)
    elif kind.tag == "bernoulli":
        fn = lambda f: _log_pdf_bernoulli(yj, f)
    elif kind.tag == "poisson":
        fn = lambda f: _log_pdf_poisson(yj, f)
    else:
        fn = lambda f: _log_pdf_beta(yj, f, shared.beta_dispersion)
    out = _quad_expect(
        fn, jnp.asarray(a), jnp.asarray(b),
        jnp.asarray(rule.nodes), jnp.asarray(rule.weights),
    )
    arr = np.asarray(out, dtype=float)
    return float(arr) if arr.ndim == 0 else arr
