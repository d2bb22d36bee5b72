"""Adam optimisation of the bound, with minibatching and checkpoints.

One ``fit`` call is fully reproducible from its seed: epoch shuffles, the
reparameterisation noise stream, and the fixed evaluation noise all derive
from it.  The full-data bound is evaluated once per epoch with the same
fixed noise, giving a trace that is comparable across configurations; the
parameters with the highest traced bound are returned alongside the final
ones.  A non-finite evaluation aborts the run and keeps the last good
parameters.

Checkpoints are JSON: schema fingerprint, architecture, training config,
named parameter segments with base64-encoded float64 payloads, and the
training RNG state.  Reloading reproduces the bound bit-for-bit.
"""

import base64
import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .errors import ConfigError, InputError, NumericalError, TrainingDiverged
from .objective import ObjectiveConfig, _draw_noise, _elbo_core, _static
from .params import (
    ModelSpec,
    build_layout,
    flatten_params,
    init_params,
    unflatten_params,
)
from .data import ColumnSchema, validate_dataset
from .gradients import pack_params
from .likelihoods import LikelihoodKind
from .seeding import derive_seed, substream

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    checkpoint_every: int = 100

    def __post_init__(self):
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise ConfigError("adam betas must lie in (0, 1)")
        if self.learning_rate < 0 or self.adam_eps <= 0:
            raise ConfigError("learning_rate must be >= 0 and adam_eps > 0")
        if self.epochs < 0 or self.checkpoint_every < 1:
            raise ConfigError("epochs must be >= 0 and checkpoint_every >= 1")


class AdamState(NamedTuple):
    m: object
    v: object


def _adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    m_new = beta1 * m + (1.0 - beta1) * g
    v_new = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m_new / (1.0 - beta1**t)
    v_hat = v_new / (1.0 - beta2**t)
    return p - lr * m_hat / (v_hat**0.5 + eps), m_new, v_new


def adam_step(p, g, state, t, cfg):
    """One bias-corrected Adam update on an array; returns (p, state)."""
    if t < 1:
        raise InputError("step index t must be >= 1")
    if np.shape(p) != np.shape(g):
        raise InputError("parameter and gradient shapes disagree")
    if not np.all(np.isfinite(np.asarray(g))):
        raise NumericalError("non-finite gradient passed to adam_step")
    p_new, m_new, v_new = _adam_update(
        p, g, state.m, state.v, t,
        cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
    )
    return p_new, AdamState(m_new, v_new)


def _train_step(flat, m, v, t, values, mask, eps_x, eps_f, scale, eta,
                layout, spec, static, lr, beta1, beta2, adam_eps):
    # the optimiser runs on one flat vector: cheaper updates and dispatch
    # than walking the parameter pytree every step
    def loss(f):
        elbo, _, _, _ = _elbo_core(
            unflatten_params(f, layout, spec), values, mask, eps_x, eps_f,
            scale, eta, layout=layout, spec=spec, static=static,
        )
        return -elbo

    neg, grad = jax.value_and_grad(loss)(flat)
    new_flat, new_m, new_v = _adam_update(
        flat, grad, m, v, t, lr, beta1, beta2, adam_eps
    )
    return new_flat, new_m, new_v, -neg


_train_step_jit = jax.jit(
    _train_step,
    static_argnames=("layout", "spec", "static", "lr", "beta1", "beta2", "adam_eps"),
)


@dataclass
class TrainResult:
    """Fit outcome.  ``epoch_seconds`` times the optimisation steps of each
    epoch; the once-per-epoch diagnostic evaluation of the full-data bound is
    accounted separately in ``eval_seconds``."""

    final_params: object
    best_params: object
    elbo_trace: np.ndarray
    trace_parts: np.ndarray  # columns: kl_x, kl_u, loglik
    best_epoch: int
    wall_time_seconds: float
    epoch_seconds: np.ndarray
    eval_seconds: np.ndarray
    n_steps: int
    spec: ModelSpec
    config: TrainConfig


def _batch_slices(n, batch_size):
    return [(start, min(start + batch_size, n)) for start in range(0, n, batch_size)]


def fit(data, spec, cfg, checkpoint_path=None, callback=None):
    """Optimise the bound on ``data``; reproducible from ``cfg.seed``."""
    validate_dataset(data)
    layout = build_layout(data.schema, spec.kernel_blocks)
    static = _static(cfg.objective)
    n = data.n_rows
    if n == 0:
        raise InputError("cannot train on an empty dataset")

    flat = flatten_params(init_params(layout, spec, cfg.seed))
    adam_m = jnp.zeros_like(flat)
    adam_v = jnp.zeros_like(flat)

    values = jnp.asarray(data.values)
    mask = jnp.asarray(data.mask)
    eta = jnp.asarray(cfg.objective.eta)
    noise_rng = substream(cfg.seed, "train-noise")
    eval_rng = substream(cfg.seed, "eval-noise")
    eval_eps_x, eval_eps_f = _draw_noise(eval_rng, static, layout, n, spec.latent_dim)

    def evaluate(f):
        out = _elbo_core(
            unflatten_params(f, layout, spec), values, mask,
            eval_eps_x, eval_eps_f,
            jnp.asarray(1.0), eta, layout=layout, spec=spec, static=static,
        )
        return tuple(float(x) for x in out)

    def materialise(f):
        return unflatten_params(jax.block_until_ready(f), layout, spec)

    trace, parts, epoch_seconds, eval_seconds = [], [], [], []
    best_epoch, best_value, best_flat = -1, -np.inf, flat
    last_good = flat
    t_step = 0
    start = time.perf_counter()

    slices = _batch_slices(n, cfg.objective.minibatch_size)
    full_batch = len(slices) == 1
    scales = {b: jnp.asarray(n / b) for b in {hi - lo for lo, hi in slices}}

    for epoch in range(cfg.epochs):
        tick = time.perf_counter()
        if full_batch:
            batches = [(values, mask)]
        else:
            perm = substream(cfg.seed, "shuffle", epoch).permutation(n)
            batches = [
                (values[jnp.asarray(perm[lo:hi])], mask[jnp.asarray(perm[lo:hi])])
                for lo, hi in slices
            ]
        for batch_values, batch_mask in batches:
            b = batch_values.shape[0]
            eps_x, eps_f = _draw_noise(noise_rng, static, layout, b, spec.latent_dim)
            t_step += 1
            flat, adam_m, adam_v, _ = _train_step_jit(
                flat, adam_m, adam_v, jnp.asarray(t_step),
                batch_values, batch_mask, eps_x, eps_f,
                scales[b], eta,
                layout=layout, spec=spec, static=static,
                lr=cfg.learning_rate, beta1=cfg.adam_beta1,
                beta2=cfg.adam_beta2, adam_eps=cfg.adam_eps,
            )
        jax.block_until_ready(flat)
        epoch_seconds.append(time.perf_counter() - tick)
        tick = time.perf_counter()
        elbo, klx, klu, ll = evaluate(flat)
        eval_seconds.append(time.perf_counter() - tick)
        if not np.isfinite(elbo):
            partial = TrainResult(
                final_params=materialise(last_good),
                best_params=materialise(best_flat),
                elbo_trace=np.asarray(trace), trace_parts=np.asarray(parts),
                best_epoch=best_epoch,
                wall_time_seconds=time.perf_counter() - start,
                epoch_seconds=np.asarray(epoch_seconds),
                eval_seconds=np.asarray(eval_seconds), n_steps=t_step,
                spec=spec, config=cfg,
            )
            raise TrainingDiverged(
                f"non-finite bound at epoch {epoch}; keeping last good parameters",
                result=partial,
            )
        trace.append(elbo)
        parts.append((klx, klu, ll))
        last_good = flat
        if elbo > best_value:
            best_value, best_epoch, best_flat = elbo, epoch, flat
        if callback is not None:
            callback(epoch, elbo)
        if checkpoint_path is not None and (epoch + 1) % cfg.checkpoint_every == 0:
            _write_checkpoint(
                checkpoint_path, data.schema, spec, cfg, materialise(best_flat),
                materialise(flat), best_epoch, noise_rng,
            )

    result = TrainResult(
        final_params=materialise(flat), best_params=materialise(best_flat),
        elbo_trace=np.asarray(trace), trace_parts=np.asarray(parts),
        best_epoch=best_epoch, wall_time_seconds=time.perf_counter() - start,
        epoch_seconds=np.asarray(epoch_seconds),
        eval_seconds=np.asarray(eval_seconds), n_steps=t_step,
        spec=spec, config=cfg,
    )
    if checkpoint_path is not None:
        _write_checkpoint(
            checkpoint_path, data.schema, spec, cfg, result.best_params,
            result.final_params, result.best_epoch, noise_rng,
        )
    return result


# --- checkpoint container ---


def schema_fingerprint(schema):
    doc = json.dumps([[c.name, str(c.kind)] for c in schema], separators=(",", ":"))
    return hashlib.sha256(doc.encode()).hexdigest()


def _encode_params(params):
    pv = pack_params(params)
    payload = base64.b64encode(
        np.asarray(pv.flat, dtype="<f8").tobytes()
    ).decode("ascii")
    segments = [[seg.name, list(seg.shape)] for seg in pv.segments]
    return payload, segments


def _spec_doc(spec):
    return {
        "latent_dim": spec.latent_dim,
        "n_inducing": spec.n_inducing,
        "hidden_width": spec.hidden_width,
        "mask_inputs": spec.mask_inputs,
        "kernel_blocks": spec.kernel_blocks,
        "sigma_x2": spec.sigma_x2,
    }


def _config_doc(cfg):
    obj = cfg.objective
    return {
        "epochs": cfg.epochs,
        "learning_rate": cfg.learning_rate,
        "adam_beta1": cfg.adam_beta1,
        "adam_beta2": cfg.adam_beta2,
        "adam_eps": cfg.adam_eps,
        "seed": cfg.seed,
        "checkpoint_every": cfg.checkpoint_every,
        "objective": {
            "n_latent_samples": obj.n_latent_samples,
            "quad_order": obj.quad_order,
            "eta": obj.eta,
            "minibatch_size": obj.minibatch_size,
            "estimator": obj.estimator,
            "n_f_samples": obj.n_f_samples,
        },
    }


def _write_checkpoint(path, schema, spec, cfg, best_params, final_params,
                      best_epoch, noise_rng):
    best_payload, segments = _encode_params(best_params)
    final_payload, _ = _encode_params(final_params)
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "schema": [{"name": c.name, "kind": str(c.kind)} for c in schema],
        "schema_fingerprint": schema_fingerprint(schema),
        "model_spec": _spec_doc(spec),
        "train_config": _config_doc(cfg),
        "segments": segments,
        "best_params": best_payload,
        "final_params": final_payload,
        "best_epoch": best_epoch,
        "rng_state": json.loads(json.dumps(noise_rng.bit_generator.state)),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def save_checkpoint(path, schema, spec, cfg, result):
    _write_checkpoint(
        path, schema, spec, cfg, result.best_params, result.final_params,
        result.best_epoch, substream(cfg.seed, "train-noise"),
    )


@dataclass
class Checkpoint:
    schema: tuple
    spec: ModelSpec
    config: TrainConfig
    best_params: object
    final_params: object
    best_epoch: int


def _decode_params(payload, segments, template):
    flat = np.frombuffer(base64.b64decode(payload), dtype="<f8")
    pv = pack_params(template)
    expected = [[seg.name, list(seg.shape)] for seg in pv.segments]
    if expected != segments:
        raise InputError("checkpoint parameter layout does not match the model")
    if flat.size != pv.size:
        raise InputError(
            f"checkpoint holds {flat.size} parameters, model expects {pv.size}"
        )
    return pv.with_flat(jnp.asarray(flat)).to_params()


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"checkpoint {path} is not valid JSON: {exc}") from None
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise InputError(f"unsupported checkpoint version {doc.get('format_version')}")
    schema = tuple(
        ColumnSchema(c["name"], LikelihoodKind.parse(c["kind"])) for c in doc["schema"]
    )
    if doc["schema_fingerprint"] != schema_fingerprint(schema):
        raise InputError("checkpoint schema fingerprint mismatch")
    spec = ModelSpec(**doc["model_spec"])
    cfg_doc = dict(doc["train_config"])
    cfg_doc["objective"] = ObjectiveConfig(**cfg_doc["objective"])
    cfg = TrainConfig(**cfg_doc)
    layout = build_layout(schema, spec.kernel_blocks)
    template = init_params(layout, spec, seed=0)
    best = _decode_params(doc["best_params"], doc["segments"], template)
    final = _decode_params(doc["final_params"], doc["segments"], template)
    return Checkpoint(schema, spec, cfg, best, final, doc["best_epoch"])
