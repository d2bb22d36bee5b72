"""Dataset container, file formats, and synthetic-data generators.

Schema file: JSON of the form

    {"columns": [{"name": "age", "kind": "gaussian"},
                 {"name": "icd_g20", "kind": "bernoulli"},
                 {"name": "severity", "kind": "categorical:4"}]}

Kind strings are "gaussian", "bernoulli", "beta", "poisson" or
"categorical:K".  Data file: comma-separated UTF-8 with a header row that
must match the schema names in order; an empty cell or the literal "NA"
marks a missing value.  Categorical cells hold 1-based category indices.
Beta cells are clamped into [1e-6, 1 - 1e-6] at ingestion so boundary
values remain inside the distribution's open support.
"""

import csv
import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm as _std_normal

from .errors import InputError
from .kernels import KernelHypers, gram, jittered_cholesky
from .likelihoods import BETA_OBS_EPS, LikelihoodKind, SharedLikelihoodParams
from .seeding import substream

MAX_GENERATIVE_ROWS = 2000  # dense N x N GP draw


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: LikelihoodKind


@dataclass(frozen=True)
class HeterogeneousDataset:
    """N x D value matrix, observation mask, and per-column kinds.

    Masked-out entries are ignored by every likelihood computation; the
    stored value at a masked position is arbitrary (0.0 after a file
    round-trip).
    """

    values: np.ndarray
    mask: np.ndarray
    schema: tuple

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "schema", tuple(self.schema))
        if values.shape != mask.shape or values.ndim != 2:
            raise InputError("values and mask must be equal-shape 2-D arrays")
        if values.shape[1] != len(self.schema):
            raise InputError(
                f"{values.shape[1]} data columns but {len(self.schema)} schema entries"
            )
        names = [c.name for c in self.schema]
        if len(set(names)) != len(names):
            raise InputError("duplicate column names in schema")

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def n_cols(self):
        return self.values.shape[1]

    def subset_rows(self, idx):
        idx = np.asarray(idx)
        return replace(self, values=self.values[idx], mask=self.mask[idx])

    def subset_columns(self, cols):
        cols = list(cols)
        return HeterogeneousDataset(
            self.values[:, cols], self.mask[:, cols], tuple(self.schema[c] for c in cols)
        )

    def columns_of_kind(self, tag):
        return [d for d, c in enumerate(self.schema) if c.kind.tag == tag]

    def with_schema(self, schema):
        return HeterogeneousDataset(self.values, self.mask, schema)


def force_gaussian_schema(schema):
    """Replace every column kind by gaussian (the all-Gaussian baseline)."""
    return tuple(ColumnSchema(c.name, LikelihoodKind("gaussian")) for c in schema)


def _check_support(value, kind, row, col):
    where = f"row {row}, column {col}"
    tag = kind.tag
    if tag == "bernoulli" and value not in (0.0, 1.0):
        raise InputError(f"bernoulli value {value} out of support at {where}")
    if tag == "poisson" and (value < 0 or value != round(value)):
        raise InputError(f"poisson value {value} out of support at {where}")
    if tag == "beta" and not 0.0 <= value <= 1.0:
        raise InputError(f"beta value {value} outside [0, 1] at {where}")
    if tag == "categorical" and (
        value != round(value) or not 1 <= value <= kind.cardinality
    ):
        raise InputError(
            f"categorical value {value} outside 1..{kind.cardinality} at {where}"
        )


def validate_dataset(ds):
    """Check every observed entry against its column's support."""
    for d, col in enumerate(ds.schema):
        observed = ds.mask[:, d]
        for n in np.nonzero(observed)[0]:
            _check_support(float(ds.values[n, d]), col.kind, int(n), col.name)


def load_schema(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"schema file {path} is not valid JSON: {exc}") from None
    columns = doc["columns"] if isinstance(doc, dict) else doc
    if not isinstance(columns, list) or not columns:
        raise InputError(f"schema file {path} must hold a non-empty column list")
    schema = []
    for entry in columns:
        try:
            schema.append(ColumnSchema(entry["name"], LikelihoodKind.parse(entry["kind"])))
        except (KeyError, TypeError):
            raise InputError(
                f"schema entries need 'name' and 'kind' fields, got {entry!r}"
            ) from None
    names = [c.name for c in schema]
    if len(set(names)) != len(names):
        raise InputError("duplicate column names in schema")
    return tuple(schema)


def save_schema(schema, path):
    doc = {"columns": [{"name": c.name, "kind": str(c.kind)} for c in schema]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_dataset(csv_path, schema_path):
    """Read a data/schema file pair into a validated dataset."""
    schema = load_schema(schema_path)
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{csv_path} is empty") from None
        expected = [c.name for c in schema]
        if header != expected:
            raise InputError(
                f"{csv_path} header {header} does not match schema names {expected}"
            )
        values, mask = [], []
        for row_num, cells in enumerate(reader):
            if len(cells) != len(schema):
                raise InputError(
                    f"{csv_path} row {row_num} has {len(cells)} cells, expected {len(schema)}"
                )
            vrow = np.zeros(len(schema))
            mrow = np.zeros(len(schema), dtype=bool)
            for d, cell in enumerate(cells):
                cell = cell.strip()
                if cell in ("", "NA"):
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    raise InputError(
                        f"unparseable cell {cell!r} at row {row_num}, "
                        f"column {schema[d].name}"
                    ) from None
                _check_support(value, schema[d].kind, row_num, schema[d].name)
                if schema[d].kind.tag == "beta":
                    value = min(max(value, BETA_OBS_EPS), 1.0 - BETA_OBS_EPS)
                vrow[d] = value
                mrow[d] = True
            values.append(vrow)
            mask.append(mrow)
    n = len(values)
    values = np.asarray(values) if n else np.zeros((0, len(schema)))
    mask = np.asarray(mask) if n else np.zeros((0, len(schema)), dtype=bool)
    return HeterogeneousDataset(values, mask, schema)


_INTEGER_TAGS = ("bernoulli", "poisson", "categorical")


def format_cell(value, kind=None):
    if kind is not None and kind.tag in _INTEGER_TAGS and value == round(value):
        return str(int(round(value)))
    return repr(float(value))


def save_dataset(ds, csv_path, schema_path=None):
    """Write data (and optionally schema); missing entries become "NA"."""
    if schema_path is not None:
        save_schema(ds.schema, schema_path)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([c.name for c in ds.schema])
        for n in range(ds.n_rows):
            writer.writerow(
                [
                    format_cell(ds.values[n, d], ds.schema[d].kind) if ds.mask[n, d] else "NA"
                    for d in range(ds.n_cols)
                ]
            )


def sample_generative(n_rows, schema, hypers=None, shared=None, sigma_x2=1.0,
                      seed=0, missing_rate=0.0, return_latent_functions=False):
    """Draw a dataset from the generative model; returns (dataset, true latents).

    Latents are N(0, sigma_x2) entrywise; each GP channel is drawn from its
    dense N(0, K_NN) prior (hence the row cap), linked, and sampled from the
    column's likelihood.  With ``missing_rate`` > 0 a Bernoulli mask hides
    entries uniformly at random.  ``return_latent_functions`` additionally
    returns the (N, total channels) matrix of GP draws, for recovery tests.
    """
    if n_rows > MAX_GENERATIVE_ROWS:
        raise InputError(f"generative sampling is capped at {MAX_GENERATIVE_ROWS} rows")
    schema = tuple(schema)
    hypers = hypers or KernelHypers(1.0, np.ones(2))
    shared = shared or SharedLikelihoodParams()
    rng = substream(seed, "generative")
    q = hypers.latent_dim
    latents = rng.normal(0.0, np.sqrt(sigma_x2), size=(n_rows, q))
    k_nn = gram(latents, latents, hypers)
    factor = jittered_cholesky(k_nn)
    chol = factor.lower
    channel_draws = []

    def draw_channel():
        f = chol @ rng.standard_normal(n_rows)
        channel_draws.append(f)
        return f

    values = np.zeros((n_rows, len(schema)))
    for d, col in enumerate(schema):
        tag = col.kind.tag
        if tag == "gaussian":
            f = draw_channel()
            values[:, d] = rng.normal(f, np.sqrt(shared.gaussian_variance))
        elif tag == "bernoulli":
            f = draw_channel()
            p = 1.0 / (1.0 + np.exp(-f))
            values[:, d] = (rng.uniform(size=n_rows) < p).astype(float)
        elif tag == "poisson":
            f = draw_channel()
            values[:, d] = rng.poisson(np.exp(f))
        elif tag == "beta":
            mu = np.clip(_std_normal.cdf(draw_channel()), 1e-12, 1.0 - 1e-12)
            a = shared.beta_dispersion * mu
            b = shared.beta_dispersion * (1.0 - mu)
            y = rng.beta(a, b)
            values[:, d] = np.clip(y, BETA_OBS_EPS, 1.0 - BETA_OBS_EPS)
        else:
            k = col.kind.cardinality
            logits = np.stack([draw_channel() for _ in range(k)], axis=1)
            logits -= logits.max(axis=1, keepdims=True)
            probs = np.exp(logits)
            probs /= probs.sum(axis=1, keepdims=True)
            u = rng.uniform(size=n_rows)
            values[:, d] = 1 + (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
    mask = np.ones((n_rows, len(schema)), dtype=bool)
    if missing_rate > 0.0:
        mask = rng.uniform(size=mask.shape) >= missing_rate
    values = np.where(mask, values, 0.0)
    dataset = HeterogeneousDataset(values, mask, schema)
    if return_latent_functions:
        return dataset, latents, np.stack(channel_draws, axis=1)
    return dataset, latents


def binarize_half(matrix, seed=0, names=None):
    """Bernoulli-sample the first ceil(D/2) columns of a [0,1] matrix.

    Each selected entry becomes 1 with probability equal to its value; the
    remaining columns keep their real values under a gaussian kind.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise InputError("binarize_half expects a 2-D matrix")
    if np.any(matrix < 0) or np.any(matrix > 1) or not np.all(np.isfinite(matrix)):
        raise InputError("binarize_half entries must lie in [0, 1]")
    n, d = matrix.shape
    n_bern = (d + 1) // 2
    rng = substream(seed, "binarize")
    values = matrix.copy()
    values[:, :n_bern] = (rng.uniform(size=(n, n_bern)) < matrix[:, :n_bern]).astype(float)
    if names is None:
        names = [f"v{j:03d}" for j in range(d)]
    schema = tuple(
        ColumnSchema(names[j], LikelihoodKind("bernoulli" if j < n_bern else "gaussian"))
        for j in range(d)
    )
    return HeterogeneousDataset(values, np.ones((n, d), dtype=bool), schema)


def smooth_random_images(n_images, side=28, n_classes=3, seed=0):
    """Surrogate image matrix: smooth blobs in [0,1] with class structure.

    Produces an (n_images, side*side) intensity matrix plus the class label
    of each image; class identity fixes the blob's anchor position, and
    per-image jitter moves it locally.  Intended as a stand-in corpus for
    binarize-half experiments.
    """
    rng = substream(seed, "images")
    yy, xx = np.mgrid[0:side, 0:side] / (side - 1.0)
    anchors = np.stack(
        [
            0.5 + 0.3 * np.array([np.cos(2 * np.pi * c / n_classes),
                                  np.sin(2 * np.pi * c / n_classes)])
            for c in range(n_classes)
        ]
    )
    labels = rng.integers(0, n_classes, size=n_images)
    images = np.zeros((n_images, side * side))
    for i in range(n_images):
        cx, cy = anchors[labels[i]] + rng.normal(0.0, 0.04, size=2)
        width = 0.12 + 0.03 * rng.uniform()
        blob = np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * width**2)))
        images[i] = np.clip(blob, 0.0, 1.0).ravel()
    return images, labels
