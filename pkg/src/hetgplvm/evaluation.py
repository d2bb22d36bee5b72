"""Evaluation protocol: clustering, consensus robustness, and cross-validation.

Gaussian-mixture clustering runs EM with full covariances for every
candidate K, keeps the best of ``n_init`` restarts, selects K by BIC, and
relabels clusters holding less than 5% of the points as outliers
(label 0).  Consensus robustness re-runs a caller-supplied
subsample-and-cluster closure R times, builds the pairwise co-clustering
frequency matrix, and compares per-cluster consensus indices against
permutation thresholds (Bonferroni-corrected quantiles under random
relabelling).  The repeated 2-fold cross-validation compares three
modelling approaches on identical fold partitions:

    1  train and evaluate on the gaussian columns only
    2  composite likelihoods on all columns
    3  a gaussian likelihood forced on every column

Predictive scores are reported on all columns and restricted to the
gaussian columns, so approaches are comparable on a common footing.
"""

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.mixture import GaussianMixture

from .data import force_gaussian_schema
from .errors import ConfigError, InputError, NumericalError
from .objective import predictive_loglik
from .seeding import derive_seed, substream
from .training import fit

OUTLIER_LABEL = 0
MIN_CLUSTER_FRAC = 0.05
_GMM_REG_COVAR = 1e-6


def _parallel_map(fn, items, jobs):
    """Ordered map; with jobs > 1 the first item runs alone (warms JIT caches)
    and the rest go through a thread pool.  Results never depend on jobs."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    head = fn(items[0])
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        tail = list(pool.map(fn, items[1:]))
    return [head] + tail


@dataclass
class ClusterResult:
    labels: np.ndarray           # 0 marks outlier points
    n_clusters: int              # clusters surviving the 5% rule
    responsibilities: np.ndarray
    model_score: float           # selection criterion at the chosen K
    k_selected: int
    criterion: str
    scores_by_k: dict


def gmm_fit(latents, k_max, n_init=10, seed=0):
    """Full-covariance EM mixture fit with BIC selection and outlier exclusion."""
    latents = np.asarray(latents, dtype=float)
    n = latents.shape[0]
    if not 1 <= k_max < n:
        raise InputError("need N > k_max >= 1")
    best, best_bic, scores = None, np.inf, {}
    for k in range(1, k_max + 1):
        gm = GaussianMixture(
            n_components=k,
            covariance_type="full",
            n_init=n_init,
            reg_covar=_GMM_REG_COVAR,
            max_iter=500,
            random_state=derive_seed(seed, "gmm", k) % (2**32),
        )
        try:
            gm.fit(latents)
        except ValueError as exc:
            raise NumericalError(f"mixture fit failed at K={k}: {exc}") from None
        bic = float(gm.bic(latents))
        scores[k] = bic
        if bic < best_bic:
            best, best_bic = gm, bic
    raw = best.predict(latents)
    responsibilities = best.predict_proba(latents)

    counts = np.bincount(raw, minlength=best.n_components)
    surviving = [k for k in range(best.n_components) if counts[k] / n >= MIN_CLUSTER_FRAC]
    order = sorted(surviving, key=lambda k: (-counts[k], k))
    relabel = {k: i + 1 for i, k in enumerate(order)}
    labels = np.array([relabel.get(k, OUTLIER_LABEL) for k in raw])
    return ClusterResult(
        labels=labels,
        n_clusters=len(order),
        responsibilities=responsibilities,
        model_score=best_bic,
        k_selected=best.n_components,
        criterion="bic",
        scores_by_k=scores,
    )


def fixed_k_labels(latents, k, n_init=10, seed=0):
    """One EM mixture fit at a fixed K; 1-based labels (no outlier exclusion).

    This is the in-loop clustering of the consensus protocol, which reuses
    the component count chosen on the full data.
    """
    latents = np.asarray(latents, dtype=float)
    gm = GaussianMixture(
        n_components=min(int(k), latents.shape[0]),
        covariance_type="full",
        n_init=n_init,
        reg_covar=_GMM_REG_COVAR,
        max_iter=500,
        random_state=seed % (2**32),
    )
    return gm.fit_predict(latents) + 1


@dataclass
class ConsensusReport:
    matrix: np.ndarray            # NaN where a pair was never co-sampled
    co_sample_counts: np.ndarray
    cluster_ids: np.ndarray       # reference clusters (outlier label excluded)
    per_cluster_index: np.ndarray
    thresholds: np.ndarray = None


def _per_cluster_indices(matrix, labels, cluster_ids):
    out = np.full(len(cluster_ids), np.nan)
    for i, k in enumerate(cluster_ids):
        members = np.flatnonzero(labels == k)
        if members.size < 2:
            continue
        sub = matrix[np.ix_(members, members)]
        vals = sub[np.triu_indices(members.size, k=1)]
        defined = vals[~np.isnan(vals)]
        if defined.size:
            out[i] = defined.mean()
    return out


def consensus(run, reference_labels, repetitions, subsample_frac=0.5, seed=0, jobs=1):
    """Co-clustering frequencies over repeated subsample-and-cluster runs.

    ``run(indices, seed)`` must return one cluster label per subsampled row.
    Matrix entry (i, j) is the fraction of co-sampled repetitions in which
    i and j landed in the same cluster; never co-sampled pairs are NaN and
    excluded from all averages.
    """
    if repetitions < 1:
        raise InputError("repetitions must be >= 1")
    if not 0.0 < subsample_frac < 1.0:
        raise InputError("subsample_frac must lie in (0, 1)")
    reference_labels = np.asarray(reference_labels)
    n = reference_labels.size
    n_sub = max(2, int(round(subsample_frac * n)))

    def one(r):
        rng = substream(seed, "consensus-subsample", r)
        idx = np.sort(rng.choice(n, size=n_sub, replace=False))
        labels = np.asarray(run(idx, derive_seed(seed, "consensus-run", r)))
        if labels.size != idx.size:
            raise InputError("run closure returned a label count != subsample size")
        return idx, labels

    co_cluster = np.zeros((n, n))
    co_sample = np.zeros((n, n), dtype=int)
    for idx, labels in _parallel_map(one, range(repetitions), jobs):
        same = (labels[:, None] == labels[None, :]).astype(float)
        co_sample[np.ix_(idx, idx)] += 1
        co_cluster[np.ix_(idx, idx)] += same
    with np.errstate(invalid="ignore"):
        matrix = np.where(co_sample > 0, co_cluster / np.maximum(co_sample, 1), np.nan)
    cluster_ids = np.unique(reference_labels[reference_labels != OUTLIER_LABEL])
    index = _per_cluster_indices(matrix, reference_labels, cluster_ids)
    return ConsensusReport(matrix, co_sample, cluster_ids, index)


def permutation_thresholds(matrix, reference_labels, r_perm=1000, alpha=0.05, seed=0):
    """Per-cluster null quantiles of the consensus index under relabelling.

    Labels are permuted (cluster sizes preserved) ``r_perm`` times; each
    cluster's threshold is the (1 - alpha/K) quantile of its null indices
    (Bonferroni correction over the K clusters).
    """
    if r_perm < 100:
        raise InputError("permutation test needs at least 100 replications")
    reference_labels = np.asarray(reference_labels)
    cluster_ids = np.unique(reference_labels[reference_labels != OUTLIER_LABEL])
    k = len(cluster_ids)
    if k == 0:
        raise InputError("no non-outlier clusters in the reference labels")
    rng = substream(seed, "permutation")
    null = np.full((r_perm, k), np.nan)
    for r in range(r_perm):
        permuted = rng.permutation(reference_labels)
        null[r] = _per_cluster_indices(matrix, permuted, cluster_ids)
    level = 1.0 - alpha / k
    thresholds = np.nanquantile(null, level, axis=0)
    return thresholds


@dataclass
class ClusterStat:
    cluster: int
    column: str
    statistic: str   # "log_odds_ratio" or "welch_t"
    value: float
    available: bool
    n_cluster: int
    n_rest: int


def _welch_t(x, y):
    nx, ny = x.size, y.size
    if nx < 2 or ny < 2:
        return np.nan, False
    vx = x.var(ddof=1)
    vy = y.var(ddof=1)
    denom = np.sqrt(vx / nx + vy / ny)
    if denom == 0.0:
        diff = x.mean() - y.mean()
        return (0.0, True) if diff == 0.0 else (np.nan, False)
    return float((x.mean() - y.mean()) / denom), True


def cluster_stats(data, labels):
    """Cluster-vs-rest statistics per column.

    Bernoulli columns get the log odds-ratio with the Haldane-Anscombe +0.5
    correction; every other column gets the Welch t-statistic over observed
    entries.  A side with too few observations marks the statistic
    unavailable.
    """
    labels = np.asarray(labels)
    if labels.size != data.n_rows:
        raise InputError("labels must align with dataset rows")
    stats = []
    for k in np.unique(labels[labels != OUTLIER_LABEL]):
        in_cluster = labels == k
        for d, col in enumerate(data.schema):
            observed = data.mask[:, d]
            x = data.values[observed & in_cluster, d]
            y = data.values[observed & ~in_cluster, d]
            if col.kind.tag == "bernoulli":
                if x.size == 0 or y.size == 0:
                    stats.append(ClusterStat(int(k), col.name, "log_odds_ratio",
                                             np.nan, False, x.size, y.size))
                    continue
                a = (x == 1).sum() + 0.5
                b = (x == 0).sum() + 0.5
                c = (y == 1).sum() + 0.5
                e = (y == 0).sum() + 0.5
                value = float(np.log((a * e) / (b * c)))
                stats.append(ClusterStat(int(k), col.name, "log_odds_ratio",
                                         value, True, x.size, y.size))
            else:
                value, ok = _welch_t(x, y)
                stats.append(ClusterStat(int(k), col.name, "welch_t",
                                         value, ok, x.size, y.size))
    return stats


APPROACHES = (1, 2, 3)


@dataclass
class CvRecord:
    rep: int
    fold: int
    approach: int
    pll_all_sum: float
    pll_all_mean: float
    pll_gauss_sum: float
    pll_gauss_mean: float
    n_all: int
    n_gauss: int


@dataclass
class CvResult:
    records: list
    reps: int
    folds: int
    approaches: tuple

    def scores(self, approach, metric="pll_gauss_sum"):
        rows = sorted(
            (r for r in self.records if r.approach == approach),
            key=lambda r: (r.rep, r.fold),
        )
        return np.array([getattr(r, metric) for r in rows])

    def paired_difference(self, a, b, metric="pll_gauss_sum"):
        return self.scores(a, metric) - self.scores(b, metric)


def _approach_views(data, approach, gauss_cols):
    """Dataset view and gaussian-scoring columns for one approach."""
    if approach == 1:
        return data.subset_columns(gauss_cols), tuple(range(len(gauss_cols)))
    if approach == 2:
        return data, tuple(gauss_cols)
    if approach == 3:
        return data.with_schema(force_gaussian_schema(data.schema)), tuple(gauss_cols)
    raise ConfigError(f"unknown approach {approach}")


def repeated_cv(data, spec, train_cfg, approaches=(1, 2, 3), folds=2, reps=30,
                seed=0, jobs=1, callback=None):
    """Repeated 2-fold cross-validation with identical partitions per approach."""
    if folds != 2:
        raise ConfigError("the protocol uses 2 folds")
    if reps < 1:
        raise InputError("reps must be >= 1")
    approaches = tuple(sorted(set(approaches)))
    if not approaches or any(a not in APPROACHES for a in approaches):
        raise ConfigError(f"approaches must be a non-empty subset of {APPROACHES}")
    gauss_cols = data.columns_of_kind("gaussian")
    if not gauss_cols and 1 in approaches:
        raise ConfigError("approach 1 needs at least one gaussian column")

    n = data.n_rows
    partitions = []
    for rep in range(reps):
        perm = substream(seed, "cv-partition", rep).permutation(n)
        half = n // 2
        partitions.append((perm[:half], perm[half:]))

    def one(unit):
        rep, fold, approach = unit
        train_idx = partitions[rep][fold]
        test_idx = partitions[rep][1 - fold]
        view, gauss_eval = _approach_views(data, approach, gauss_cols)
        run_seed = derive_seed(seed, "cv-fit", rep, fold, approach)
        cfg = dataclasses.replace(train_cfg, seed=run_seed)
        result = fit(view.subset_rows(train_idx), spec, cfg)
        heldout = view.subset_rows(test_idx)
        pll_all = predictive_loglik(
            result.best_params, spec, heldout, cfg.objective, seed=run_seed
        )
        pll_gauss = predictive_loglik(
            result.best_params, spec, heldout, cfg.objective,
            seed=run_seed, columns=gauss_eval,
        )
        record = CvRecord(
            rep, fold, approach,
            pll_all.total, pll_all.per_entry_mean,
            pll_gauss.total, pll_gauss.per_entry_mean,
            pll_all.n_entries, pll_gauss.n_entries,
        )
        if callback is not None:
            callback(record)
        return record

    units = [
        (rep, fold, approach)
        for rep in range(reps) for fold in range(folds) for approach in approaches
    ]
    records = _parallel_map(one, units, jobs)
    return CvResult(records, reps, folds, approaches)


@dataclass
class LatentDimSelection:
    best_q: int
    per_q: dict  # q -> {"train_elbo": ..., "heldout_pll": ..., "run": ...}


def select_latent_dim(train_data, heldout_data, q_candidates, spec, train_cfg,
                      runs_per_q=3, seed=0):
    """Pick the latent dimension by held-out predictive log-likelihood.

    Each candidate Q is trained ``runs_per_q`` times; the run with the
    highest traced bound predicts the held-out data, and the Q with the
    best predictive log-likelihood wins.
    """
    q_candidates = sorted(set(int(q) for q in q_candidates))
    if not q_candidates:
        raise InputError("no latent dimensions to evaluate")
    per_q = {}
    for q in q_candidates:
        q_spec = dataclasses.replace(spec, latent_dim=q)
        best_run, best_elbo, best_result = None, -np.inf, None
        for run in range(runs_per_q):
            cfg = dataclasses.replace(
                train_cfg, seed=derive_seed(seed, "qselect", q, run)
            )
            result = fit(train_data, q_spec, cfg)
            top = result.elbo_trace.max() if result.elbo_trace.size else -np.inf
            if top > best_elbo:
                best_run, best_elbo, best_result = run, top, result
        pll = predictive_loglik(
            best_result.best_params, q_spec, heldout_data, train_cfg.objective,
            seed=derive_seed(seed, "qselect-eval", q),
        )
        per_q[q] = {
            "train_elbo": float(best_elbo),
            "heldout_pll": float(pll.total),
            "heldout_pll_mean": float(pll.per_entry_mean),
            "run": best_run,
        }
    best_q = max(q_candidates, key=lambda q: (per_q[q]["heldout_pll"], -q))
    return LatentDimSelection(best_q, per_q)
