import numpy as np
import pytest

from hetgplvm import (
    BERNOULLI,
    BETA,
    GAUSSIAN,
    POISSON,
    ColumnSchema,
    HeterogeneousDataset,
    KernelHypers,
    ModelSpec,
    ObjectiveConfig,
    build_layout,
    categorical,
    init_params,
    sample_generative,
)


def mixed_schema(n_gauss=1, n_bern=1, n_beta=1, n_pois=0, n_cat=0, cat_k=3):
    schema = []
    for j in range(n_gauss):
        schema.append(ColumnSchema(f"g{j}", GAUSSIAN))
    for j in range(n_bern):
        schema.append(ColumnSchema(f"b{j}", BERNOULLI))
    for j in range(n_beta):
        schema.append(ColumnSchema(f"be{j}", BETA))
    for j in range(n_pois):
        schema.append(ColumnSchema(f"p{j}", POISSON))
    for j in range(n_cat):
        schema.append(ColumnSchema(f"c{j}", categorical(cat_k)))
    return tuple(schema)


def tiny_problem(n_rows=6, seed=3, schema=None, spec=None, missing_rate=0.0,
                 init_seed=7):
    """Small mixed dataset plus initialised parameters, for oracle tests."""
    schema = schema or mixed_schema()
    spec = spec or ModelSpec(latent_dim=2, n_inducing=2, hidden_width=4)
    data, latents = sample_generative(
        n_rows, schema, KernelHypers(1.0, np.ones(spec.latent_dim)),
        seed=seed, missing_rate=missing_rate,
    )
    layout = build_layout(schema, spec.kernel_blocks)
    params = init_params(layout, spec, seed=init_seed)
    return data, latents, spec, layout, params


@pytest.fixture
def rng():
    return np.random.default_rng(0)
