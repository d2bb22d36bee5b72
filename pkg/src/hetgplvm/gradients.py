"""Flat parameter vectors, exact gradients, and a finite-difference gate.

``ParamVector`` ravels a parameter pytree into one float64 vector with
named segments (kernel log-hypers, inducing inputs, per-channel posterior
parameters, shared likelihood log-params, encoder weights), so a scalar
objective can be differentiated, checked coordinate-by-coordinate, and
serialised without caring about the tree structure.

Gradients come from reverse-mode automatic differentiation; noise draws
are held fixed during differentiation (the reparameterisation trick), so
the gradient is that of the estimator.  ``finite_diff_check`` is the
verification harness: central differences at step ``h`` on every
coordinate, reporting the worst relative error and where it occurred.
"""

from dataclasses import dataclass, replace
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .errors import NumericalError


@dataclass(frozen=True)
class Segment:
    name: str
    shape: tuple
    offset: int
    size: int


@dataclass(frozen=True)
class ParamVector:
    """Flat view of a parameter pytree plus the layout to rebuild it."""

    flat: jnp.ndarray
    segments: tuple
    treedef: object

    @property
    def size(self):
        return int(self.flat.size)

    def with_flat(self, flat):
        return replace(self, flat=flat)

    def to_params(self):
        leaves = [
            jnp.reshape(self.flat[seg.offset:seg.offset + seg.size], seg.shape)
            for seg in self.segments
        ]
        return jax.tree_util.tree_unflatten(self.treedef, leaves)

    def segment_at(self, index):
        for seg in self.segments:
            if seg.offset <= index < seg.offset + seg.size:
                return seg.name
        raise IndexError(index)


def _leaf_names(tree, prefix=""):
    """Depth-first field names matching jax's flatten order for named tuples."""
    if isinstance(tree, tuple) and hasattr(tree, "_fields"):
        names = []
        for field, value in zip(tree._fields, tree):
            names.extend(_leaf_names(value, f"{prefix}{field}."))
        return names
    return [prefix.rstrip(".")]


def pack_params(params):
    """Ravel a parameter pytree into a ParamVector with named segments."""
    leaves, treedef = jax.tree_util.tree_flatten(params)
    names = _leaf_names(params)
    if len(names) != len(leaves):
        names = [f"leaf{i}" for i in range(len(leaves))]
    segments, offset = [], 0
    flats = []
    for name, leaf in zip(names, leaves):
        arr = jnp.asarray(leaf, dtype=jnp.float64)
        size = int(arr.size)
        segments.append(Segment(name, tuple(arr.shape), offset, size))
        flats.append(jnp.ravel(arr))
        offset += size
    flat = jnp.concatenate(flats) if flats else jnp.zeros(0)
    return ParamVector(flat, tuple(segments), treedef)


def unpack_params(pv):
    return pv.to_params()


def value_and_grad(objective, p):
    """Objective value and its gradient with respect to every coordinate.

    ``objective`` must be a JAX-traceable scalar function of a ParamVector.
    Raises NumericalError naming the offending segment if the value or any
    gradient entry is non-finite.
    """
    def flat_objective(flat):
        return objective(p.with_flat(flat))

    value, grad = jax.value_and_grad(flat_objective)(p.flat)
    value = float(value)
    grad = np.asarray(grad)
    if not np.isfinite(value):
        raise NumericalError("objective value is non-finite")
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise NumericalError(
            f"non-finite gradient in segment '{p.segment_at(bad)}' (coordinate {bad})"
        )
    return value, grad


class FiniteDiffReport(NamedTuple):
    max_rel_error: float
    worst_index: int
    worst_segment: str
    analytic: float
    numeric: float
    rel_errors: np.ndarray


def finite_diff_check(objective, p, h=1e-5, gradient=None):
    """Central-difference check of the analytic gradient, coordinate by coordinate.

    Relative error uses denominator max(|g|, 1e-8).  Pass ``gradient`` to
    check an externally supplied gradient instead of the autodiff one.
    """
    if gradient is None:
        _, gradient = value_and_grad(objective, p)
    gradient = np.asarray(gradient, dtype=float)
    flat = np.asarray(p.flat, dtype=float)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        shift = np.zeros_like(flat)
        shift[i] = h
        up = float(objective(p.with_flat(jnp.asarray(flat + shift))))
        down = float(objective(p.with_flat(jnp.asarray(flat - shift))))
        numeric[i] = (up - down) / (2.0 * h)
    rel = np.abs(gradient - numeric) / np.maximum(np.abs(gradient), 1e-8)
    worst = int(np.argmax(rel)) if rel.size else 0
    return FiniteDiffReport(
        max_rel_error=float(rel[worst]) if rel.size else 0.0,
        worst_index=worst,
        worst_segment=p.segment_at(worst) if rel.size else "",
        analytic=float(gradient[worst]) if rel.size else 0.0,
        numeric=float(numeric[worst]) if rel.size else 0.0,
        rel_errors=rel,
    )
