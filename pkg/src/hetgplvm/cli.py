"""Command-line interface.

Subcommands: train, embed, eval, cluster, consensus, cv, ablate, simulate.
Every run writes a ``manifest.json`` echoing the fully resolved
configuration and master seed.  Outputs are a pure function of (input
files, flags, seed): re-running a command reproduces every data file
byte-for-byte; only the manifest's timestamp field and the wall-clock
columns of ``*_timing.csv`` files vary between runs.

Flags override values from an optional JSON ``--config`` file, which in
turn overrides built-in defaults.  Exit codes: 0 success, 2 usage or
configuration error, 3 input-validation error, 4 numerical error.
"""

import argparse
import csv
import dataclasses
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .data import (
    ColumnSchema,
    binarize_half,
    load_dataset,
    sample_generative,
    save_dataset,
    smooth_random_images,
)
from .errors import ConfigError, InputError, NumericalError, TrainingDiverged
from .evaluation import (
    cluster_stats,
    consensus,
    fixed_k_labels,
    gmm_fit,
    permutation_thresholds,
    repeated_cv,
    select_latent_dim,
)
from .kernels import KernelHypers
from .likelihoods import (
    BERNOULLI,
    BETA,
    GAUSSIAN,
    POISSON,
    SharedLikelihoodParams,
    categorical,
)
from .objective import ObjectiveConfig, encode_dataset, predictive_loglik
from .params import ModelSpec
from .seeding import derive_seed, substream
from .training import TrainConfig, fit, load_checkpoint

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4


class UsageError(Exception):
    pass


# --- deterministic file helpers ---


def _fmt(value):
    if value is None:
        return "NA"
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "NA" if np.isnan(value) else repr(value)
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_manifest(out_dir, command, resolved, inputs, outputs):
    doc = {
        "command": command,
        "package_version": __version__,
        "config": resolved,
        "inputs": inputs,
        "outputs": sorted(outputs),
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    _write_json(os.path.join(out_dir, "manifest.json"), doc)


def _require_file(path, what):
    if path is None:
        raise UsageError(f"missing required {what}")
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _ensure_out_dir(path):
    if path is None:
        raise UsageError("missing required --out-dir")
    os.makedirs(path, exist_ok=True)
    return path


# --- configuration resolution ---

TRAIN_DEFAULTS = {
    "seed": 0,
    "latent_dim": 2,
    "inducing": 32,
    "hidden_width": 30,
    "quad_order": 3,
    "estimator": "quadrature",
    "eta": 1.0,
    "epochs": 1000,
    "batch": 64,
    "learning_rate": 1e-3,
    "n_latent_samples": 1,
    "n_f_samples": 8,
    "kernel_blocks": "shared",
    "mask_inputs": True,
    "sigma_x2": 1.0,
    "checkpoint_every": 100,
}


def _load_config_file(path):
    if path is None:
        return {}
    _require_file(path, "--config file")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError(f"config file {path} must hold a JSON object")
    return doc


def _resolve(args, defaults):
    """Merge flag values over config-file values over defaults."""
    file_cfg = _load_config_file(getattr(args, "config", None))
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    resolved = {}
    for key, default in defaults.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in file_cfg:
            resolved[key] = file_cfg[key]
        else:
            resolved[key] = default
    return resolved


def _model_spec(cfg):
    return ModelSpec(
        latent_dim=int(cfg["latent_dim"]),
        n_inducing=int(cfg["inducing"]),
        hidden_width=int(cfg["hidden_width"]),
        mask_inputs=bool(cfg["mask_inputs"]),
        kernel_blocks=cfg["kernel_blocks"],
        sigma_x2=float(cfg["sigma_x2"]),
    )


def _train_config(cfg, estimator=None):
    objective = ObjectiveConfig(
        n_latent_samples=int(cfg["n_latent_samples"]),
        quad_order=int(cfg["quad_order"]),
        eta=float(cfg["eta"]),
        minibatch_size=int(cfg["batch"]),
        estimator=estimator or cfg["estimator"],
        n_f_samples=int(cfg["n_f_samples"]),
    )
    return TrainConfig(
        epochs=int(cfg["epochs"]),
        learning_rate=float(cfg["learning_rate"]),
        seed=int(cfg["seed"]),
        objective=objective,
        checkpoint_every=int(cfg["checkpoint_every"]),
    )


def _load_data(args):
    csv_path = _require_file(getattr(args, "data", None), "--data file")
    schema_path = _require_file(getattr(args, "schema", None), "--schema file")
    return load_dataset(csv_path, schema_path)


def _load_model(args):
    path = _require_file(getattr(args, "checkpoint", None), "--checkpoint file")
    return load_checkpoint(path)


def _check_schema_match(checkpoint, data):
    ck = [(c.name, str(c.kind)) for c in checkpoint.schema]
    ds = [(c.name, str(c.kind)) for c in data.schema]
    if ck != ds:
        raise InputError("dataset schema does not match the checkpoint schema")


# --- subcommands ---


def _cmd_train(args):
    out_dir = _ensure_out_dir(args.out_dir)
    data = _load_data(args)
    cfg = _resolve(args, TRAIN_DEFAULTS)
    spec = _model_spec(cfg)
    train_cfg = _train_config(cfg)
    ckpt_path = os.path.join(out_dir, "checkpoint.json")
    trace_path = os.path.join(out_dir, "trace.csv")

    def finish(result):
        _write_csv(
            trace_path,
            ["epoch", "elbo", "kl_x", "kl_u", "loglik"],
            [
                (e, result.elbo_trace[e], *result.trace_parts[e])
                for e in range(len(result.elbo_trace))
            ],
        )
        _write_manifest(
            out_dir, "train", cfg,
            {"data": args.data, "schema": args.schema},
            ["checkpoint.json", "trace.csv"],
        )

    try:
        result = fit(data, spec, train_cfg, checkpoint_path=ckpt_path)
    except TrainingDiverged as exc:
        if exc.result is not None:
            finish(exc.result)
        print(f"training diverged: {exc}; checkpoint kept at {ckpt_path}",
              file=sys.stderr)
        return EXIT_NUMERICAL
    finish(result)
    return 0


def _cmd_embed(args):
    out_dir = _ensure_out_dir(args.out_dir)
    checkpoint = _load_model(args)
    data = _load_data(args)
    _check_schema_match(checkpoint, data)
    means, stds = encode_dataset(checkpoint.best_params, checkpoint.spec, data)
    q = means.shape[1]
    header = ["row"] + [f"m_{j + 1}" for j in range(q)] + [f"s_{j + 1}" for j in range(q)]
    rows = [(n, *means[n], *stds[n]) for n in range(data.n_rows)]
    _write_csv(os.path.join(out_dir, "latents.csv"), header, rows)
    _write_manifest(
        out_dir, "embed", {"latent_dim": q},
        {"data": args.data, "schema": args.schema, "checkpoint": args.checkpoint},
        ["latents.csv"],
    )
    return 0


EVAL_DEFAULTS = dict(TRAIN_DEFAULTS, select_q=None, runs_per_q=3, heldout_frac=0.5)


def _cmd_eval(args):
    out_dir = _ensure_out_dir(args.out_dir)
    data = _load_data(args)
    cfg = _resolve(args, EVAL_DEFAULTS)
    seed = int(cfg["seed"])
    outputs = ["metrics.csv"]

    if cfg["select_q"]:
        q_candidates = [int(tok) for tok in str(cfg["select_q"]).split(",") if tok]
        frac = float(cfg["heldout_frac"])
        if not 0.0 < frac < 1.0:
            raise ConfigError("heldout_frac must lie in (0, 1)")
        perm = substream(seed, "eval-split").permutation(data.n_rows)
        n_held = max(1, int(round(frac * data.n_rows)))
        heldout = data.subset_rows(perm[:n_held])
        train = data.subset_rows(perm[n_held:])
        selection = select_latent_dim(
            train, heldout, q_candidates, _model_spec(cfg), _train_config(cfg),
            runs_per_q=int(cfg["runs_per_q"]), seed=seed,
        )
        _write_csv(
            os.path.join(out_dir, "selection.csv"),
            ["q", "train_elbo", "heldout_pll", "heldout_pll_mean", "best_run"],
            [
                (q, rec["train_elbo"], rec["heldout_pll"],
                 rec["heldout_pll_mean"], rec["run"])
                for q, rec in sorted(selection.per_q.items())
            ],
        )
        metrics = [("best_q", selection.best_q)]
        outputs.append("selection.csv")
    else:
        checkpoint = _load_model(args)
        _check_schema_match(checkpoint, data)
        pll = predictive_loglik(
            checkpoint.best_params, checkpoint.spec, data,
            checkpoint.config.objective, seed=seed,
        )
        metrics = [
            ("pll_sum", pll.total),
            ("pll_per_entry_mean", pll.per_entry_mean),
            ("n_entries", pll.n_entries),
        ]
    _write_csv(os.path.join(out_dir, "metrics.csv"), ["metric", "value"], metrics)
    _write_manifest(
        out_dir, "eval", cfg,
        {"data": args.data, "schema": args.schema, "checkpoint": args.checkpoint},
        outputs,
    )
    return 0


CLUSTER_DEFAULTS = {"seed": 0, "k_max": 20, "n_init": 10}


def _cmd_cluster(args):
    out_dir = _ensure_out_dir(args.out_dir)
    checkpoint = _load_model(args)
    data = _load_data(args)
    _check_schema_match(checkpoint, data)
    cfg = _resolve(args, CLUSTER_DEFAULTS)
    means, _ = encode_dataset(checkpoint.best_params, checkpoint.spec, data)
    result = gmm_fit(means, int(cfg["k_max"]), n_init=int(cfg["n_init"]),
                     seed=int(cfg["seed"]))
    _write_csv(
        os.path.join(out_dir, "clusters.csv"),
        ["row", "label"],
        [(n, int(result.labels[n])) for n in range(data.n_rows)],
    )
    stats = cluster_stats(data, result.labels)
    _write_csv(
        os.path.join(out_dir, "cluster_stats.csv"),
        ["cluster", "column", "statistic", "value", "available", "n_cluster", "n_rest"],
        [
            (s.cluster, s.column, s.statistic,
             s.value if s.available else None, s.available, s.n_cluster, s.n_rest)
            for s in stats
        ],
    )
    sizes = {int(k): int((result.labels == k).sum()) for k in np.unique(result.labels)}
    _write_json(
        os.path.join(out_dir, "cluster_report.json"),
        {
            "k_selected": result.k_selected,
            "n_clusters_after_exclusion": result.n_clusters,
            "selection_criterion": result.criterion,
            "model_score": result.model_score,
            "scores_by_k": {str(k): v for k, v in result.scores_by_k.items()},
            "cluster_sizes": {str(k): v for k, v in sizes.items()},
        },
    )
    _write_manifest(
        out_dir, "cluster", cfg,
        {"data": args.data, "schema": args.schema, "checkpoint": args.checkpoint},
        ["clusters.csv", "cluster_stats.csv", "cluster_report.json"],
    )
    return 0


CONSENSUS_DEFAULTS = dict(
    TRAIN_DEFAULTS,
    reps=30,
    subsample_frac=0.5,
    clusters=None,
    permutations=1000,
    alpha=0.05,
    n_init=10,
    refit=True,
    jobs=1,
)


def _load_reference_labels(path, n_rows):
    _require_file(path, "--reference labels file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if "row" not in reader.fieldnames or "label" not in reader.fieldnames:
            raise InputError(f"{path} must have 'row' and 'label' columns")
        labels = np.full(n_rows, -1, dtype=int)
        for rec in reader:
            labels[int(rec["row"])] = int(rec["label"])
    if np.any(labels < 0):
        raise InputError(f"{path} does not label every row")
    return labels


def _cmd_consensus(args):
    out_dir = _ensure_out_dir(args.out_dir)
    data = _load_data(args)
    cfg = _resolve(args, CONSENSUS_DEFAULTS)
    if cfg["clusters"] is None:
        raise UsageError("--clusters (fixed mixture size per repetition) is required")
    k_fixed = int(cfg["clusters"])
    reference = _load_reference_labels(args.reference, data.n_rows)
    seed = int(cfg["seed"])
    n_init = int(cfg["n_init"])

    if cfg["refit"]:
        spec = _model_spec(cfg)
        base_cfg = _train_config(cfg)

        def run(indices, run_seed):
            sub = data.subset_rows(indices)
            result = fit(sub, spec, dataclasses.replace(base_cfg, seed=run_seed))
            means, _ = encode_dataset(result.best_params, spec, sub)
            return fixed_k_labels(means, k_fixed, n_init=n_init, seed=run_seed)
    else:
        checkpoint = _load_model(args)
        _check_schema_match(checkpoint, data)
        all_means, _ = encode_dataset(checkpoint.best_params, checkpoint.spec, data)

        def run(indices, run_seed):
            return fixed_k_labels(all_means[indices], k_fixed, n_init=n_init,
                                  seed=run_seed)

    report = consensus(
        run, reference, int(cfg["reps"]),
        subsample_frac=float(cfg["subsample_frac"]), seed=seed,
        jobs=int(cfg["jobs"]),
    )
    thresholds = permutation_thresholds(
        report.matrix, reference, r_perm=int(cfg["permutations"]),
        alpha=float(cfg["alpha"]), seed=seed,
    )
    n = data.n_rows
    _write_csv(
        os.path.join(out_dir, "consensus_matrix.csv"),
        ["row"] + [str(j) for j in range(n)],
        [(i, *report.matrix[i]) for i in range(n)],
    )
    _write_csv(
        os.path.join(out_dir, "consensus_summary.csv"),
        ["cluster", "consensus_index", "threshold", "exceeds_threshold"],
        [
            (int(k), report.per_cluster_index[i], thresholds[i],
             bool(report.per_cluster_index[i] > thresholds[i]))
            for i, k in enumerate(report.cluster_ids)
        ],
    )
    _write_manifest(
        out_dir, "consensus", cfg,
        {"data": args.data, "schema": args.schema, "reference": args.reference,
         "checkpoint": getattr(args, "checkpoint", None)},
        ["consensus_matrix.csv", "consensus_summary.csv"],
    )
    return 0


CV_DEFAULTS = dict(TRAIN_DEFAULTS, approaches="1,2,3", reps=30, folds=2, jobs=1)


def _cmd_cv(args):
    out_dir = _ensure_out_dir(args.out_dir)
    data = _load_data(args)
    cfg = _resolve(args, CV_DEFAULTS)
    approaches = tuple(int(tok) for tok in str(cfg["approaches"]).split(",") if tok)
    result = repeated_cv(
        data, _model_spec(cfg), _train_config(cfg),
        approaches=approaches, folds=int(cfg["folds"]), reps=int(cfg["reps"]),
        seed=int(cfg["seed"]), jobs=int(cfg["jobs"]),
    )
    _write_csv(
        os.path.join(out_dir, "cv_scores.csv"),
        ["rep", "fold", "approach", "pll_all_sum", "pll_all_mean",
         "pll_gauss_sum", "pll_gauss_mean", "n_all", "n_gauss"],
        [
            (r.rep, r.fold, r.approach, r.pll_all_sum, r.pll_all_mean,
             r.pll_gauss_sum, r.pll_gauss_mean, r.n_all, r.n_gauss)
            for r in sorted(result.records, key=lambda r: (r.rep, r.fold, r.approach))
        ],
    )
    paired_rows = []
    for a, b in [(2, 1), (2, 3)]:
        if a in result.approaches and b in result.approaches:
            d_gauss = result.paired_difference(a, b, "pll_gauss_sum")
            d_all = result.paired_difference(a, b, "pll_all_sum")
            base = result.scores(a, "pll_gauss_sum")
            for i in range(len(base)):
                rep, fold = divmod(i, result.folds)
                paired_rows.append(
                    (f"{a}-{b}", rep, fold, d_gauss[i], d_all[i])
                )
    _write_csv(
        os.path.join(out_dir, "cv_paired.csv"),
        ["comparison", "rep", "fold", "diff_gauss_sum", "diff_all_sum"],
        paired_rows,
    )
    _write_manifest(
        out_dir, "cv", cfg, {"data": args.data, "schema": args.schema},
        ["cv_scores.csv", "cv_paired.csv"],
    )
    return 0


ABLATE_DEFAULTS = dict(TRAIN_DEFAULTS, reps=10, subsample_frac=0.5)


def _cmd_ablate(args):
    out_dir = _ensure_out_dir(args.out_dir)
    data = _load_data(args)
    cfg = _resolve(args, ABLATE_DEFAULTS)
    seed = int(cfg["seed"])
    reps = int(cfg["reps"])
    frac = float(cfg["subsample_frac"])
    spec = _model_spec(cfg)
    score_rows, timing_rows = [], []
    n = data.n_rows
    for rep in range(reps):
        perm = substream(seed, "ablate-partition", rep).permutation(n)
        n_train = max(1, int(round(frac * n)))
        train = data.subset_rows(perm[:n_train])
        test = data.subset_rows(perm[n_train:])
        for arm in ("quadrature", "sampling"):
            run_seed = derive_seed(seed, "ablate-fit", rep)
            train_cfg = dataclasses.replace(
                _train_config(cfg, estimator=arm), seed=run_seed
            )
            result = fit(train, spec, train_cfg)
            pll = predictive_loglik(
                result.best_params, spec, test, train_cfg.objective, seed=run_seed
            )
            score_rows.append((rep, arm, pll.total, pll.per_entry_mean, pll.n_entries))
            # first epoch includes JIT compilation; report steady-state too
            steady = result.epoch_seconds[1:] if len(result.epoch_seconds) > 1 \
                else result.epoch_seconds
            timing_rows.append((
                rep, arm, result.wall_time_seconds,
                float(np.mean(steady)), float(np.median(steady)),
                len(result.epoch_seconds),
            ))
    _write_csv(
        os.path.join(out_dir, "ablation_scores.csv"),
        ["rep", "arm", "pll_sum", "pll_per_entry_mean", "n_entries"],
        score_rows,
    )
    _write_csv(
        os.path.join(out_dir, "ablation_timing.csv"),
        ["rep", "arm", "fit_seconds", "epoch_seconds_mean",
         "epoch_seconds_median", "epochs"],
        timing_rows,
    )
    _write_manifest(
        out_dir, "ablate", cfg, {"data": args.data, "schema": args.schema},
        ["ablation_scores.csv", "ablation_timing.csv"],
    )
    return 0


SIMULATE_DEFAULTS = {
    "seed": 0,
    "mode": "generative",
    "n": 200,
    "n_gaussian": 6,
    "n_bernoulli": 6,
    "n_beta": 0,
    "n_poisson": 0,
    "n_categorical": 0,
    "cat_cardinality": 3,
    "latent_dim": 2,
    "signal_variance": 1.0,
    "lengthscale": 1.0,
    "noise_variance": 1.0,
    "beta_dispersion": 10.0,
    "missing_rate": 0.0,
    "classes": 3,
    "side": 28,
}


def _simulated_schema(cfg):
    schema = []
    for j in range(int(cfg["n_gaussian"])):
        schema.append(ColumnSchema(f"g{j:02d}", GAUSSIAN))
    for j in range(int(cfg["n_bernoulli"])):
        schema.append(ColumnSchema(f"b{j:02d}", BERNOULLI))
    for j in range(int(cfg["n_beta"])):
        schema.append(ColumnSchema(f"be{j:02d}", BETA))
    for j in range(int(cfg["n_poisson"])):
        schema.append(ColumnSchema(f"p{j:02d}", POISSON))
    for j in range(int(cfg["n_categorical"])):
        schema.append(ColumnSchema(f"c{j:02d}", categorical(int(cfg["cat_cardinality"]))))
    if not schema:
        raise ConfigError("simulated schema has no columns")
    return tuple(schema)


def _cmd_simulate(args):
    out_dir = _ensure_out_dir(args.out_dir)
    cfg = _resolve(args, SIMULATE_DEFAULTS)
    seed = int(cfg["seed"])
    data_path = os.path.join(out_dir, "data.csv")
    schema_path = os.path.join(out_dir, "schema.json")
    outputs = ["data.csv", "schema.json"]
    if cfg["mode"] == "generative":
        schema = _simulated_schema(cfg)
        q = int(cfg["latent_dim"])
        hypers = KernelHypers(float(cfg["signal_variance"]),
                              np.full(q, float(cfg["lengthscale"])))
        shared = SharedLikelihoodParams(float(cfg["noise_variance"]),
                                        float(cfg["beta_dispersion"]))
        ds, latents = sample_generative(
            int(cfg["n"]), schema, hypers, shared,
            seed=seed, missing_rate=float(cfg["missing_rate"]),
        )
        save_dataset(ds, data_path, schema_path)
        _write_csv(
            os.path.join(out_dir, "latents.csv"),
            ["row"] + [f"x_{j + 1}" for j in range(q)],
            [(i, *latents[i]) for i in range(ds.n_rows)],
        )
        outputs.append("latents.csv")
    elif cfg["mode"] == "images":
        images, labels = smooth_random_images(
            int(cfg["n"]), side=int(cfg["side"]),
            n_classes=int(cfg["classes"]), seed=seed,
        )
        ds = binarize_half(images, seed=seed)
        save_dataset(ds, data_path, schema_path)
        _write_csv(
            os.path.join(out_dir, "labels.csv"),
            ["row", "label"],
            [(i, int(labels[i])) for i in range(len(labels))],
        )
        outputs.append("labels.csv")
    else:
        raise UsageError(f"unknown simulate mode {cfg['mode']!r}")
    _write_manifest(out_dir, "simulate", cfg, {}, outputs)
    return 0


# --- parser wiring ---


def _add_io_flags(parser, data=True, checkpoint=False, reference=False):
    if data:
        parser.add_argument("--data", help="CSV data file")
        parser.add_argument("--schema", help="JSON schema file")
    if checkpoint:
        parser.add_argument("--checkpoint", help="model checkpoint file")
    if reference:
        parser.add_argument("--reference", help="reference clusters.csv")
    parser.add_argument("--config", help="JSON config file (flags override it)")
    parser.add_argument("--out-dir", help="output directory")
    parser.add_argument("--seed", type=int, help="master seed")


def _add_train_flags(parser):
    parser.add_argument("--latent-dim", type=int, dest="latent_dim")
    parser.add_argument("--inducing", type=int)
    parser.add_argument("--hidden-width", type=int, dest="hidden_width")
    parser.add_argument("--quad-order", type=int, dest="quad_order")
    parser.add_argument("--estimator", choices=("quadrature", "sampling"))
    parser.add_argument("--eta", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch", type=int)
    parser.add_argument("--learning-rate", type=float, dest="learning_rate")
    parser.add_argument("--n-latent-samples", type=int, dest="n_latent_samples")
    parser.add_argument("--n-f-samples", type=int, dest="n_f_samples")
    parser.add_argument("--kernel-blocks", choices=("shared", "per-kind"),
                        dest="kernel_blocks")
    parser.add_argument("--no-mask-inputs", action="store_false", dest="mask_inputs",
                        default=None)
    parser.add_argument("--sigma-x2", type=float, dest="sigma_x2")
    parser.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hetgplvm",
        description="Latent GP embeddings of mixed-type data with missing values",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write a checkpoint")
    _add_io_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("embed", help="export latent means and stds")
    _add_io_flags(p, checkpoint=True)
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("eval", help="predictive log-likelihood / latent-dim sweep")
    _add_io_flags(p, checkpoint=True)
    _add_train_flags(p)
    p.add_argument("--select-q", dest="select_q",
                   help="comma-separated latent dims to sweep")
    p.add_argument("--runs-per-q", type=int, dest="runs_per_q")
    p.add_argument("--heldout-frac", type=float, dest="heldout_frac")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("cluster", help="Gaussian-mixture clustering of the embedding")
    _add_io_flags(p, checkpoint=True)
    p.add_argument("--k-max", type=int, dest="k_max")
    p.add_argument("--n-init", type=int, dest="n_init")
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("consensus", help="consensus-clustering robustness analysis")
    _add_io_flags(p, checkpoint=True, reference=True)
    _add_train_flags(p)
    p.add_argument("--reps", type=int)
    p.add_argument("--subsample-frac", type=float, dest="subsample_frac")
    p.add_argument("--clusters", type=int, help="fixed mixture size per repetition")
    p.add_argument("--permutations", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--n-init", type=int, dest="n_init")
    p.add_argument("--no-refit", action="store_false", dest="refit", default=None,
                   help="re-cluster precomputed latents instead of refitting")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=_cmd_consensus)

    p = sub.add_parser("cv", help="repeated 2-fold cross-validation of approaches 1/2/3")
    _add_io_flags(p)
    _add_train_flags(p)
    p.add_argument("--approaches", help="comma-separated subset of 1,2,3")
    p.add_argument("--reps", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("ablate", help="matched quadrature-vs-sampling comparison")
    _add_io_flags(p)
    _add_train_flags(p)
    p.add_argument("--reps", type=int)
    p.add_argument("--subsample-frac", type=float, dest="subsample_frac")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    p.add_argument("--mode", choices=("generative", "images"))
    p.add_argument("--n", type=int)
    p.add_argument("--n-gaussian", type=int, dest="n_gaussian")
    p.add_argument("--n-bernoulli", type=int, dest="n_bernoulli")
    p.add_argument("--n-beta", type=int, dest="n_beta")
    p.add_argument("--n-poisson", type=int, dest="n_poisson")
    p.add_argument("--n-categorical", type=int, dest="n_categorical")
    p.add_argument("--cat-cardinality", type=int, dest="cat_cardinality")
    p.add_argument("--latent-dim", type=int, dest="latent_dim")
    p.add_argument("--signal-variance", type=float, dest="signal_variance")
    p.add_argument("--lengthscale", type=float)
    p.add_argument("--noise-variance", type=float, dest="noise_variance")
    p.add_argument("--beta-dispersion", type=float, dest="beta_dispersion")
    p.add_argument("--missing-rate", type=float, dest="missing_rate")
    p.add_argument("--classes", type=int)
    p.add_argument("--side", type=int)
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_simulate)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
