import numpy as np
import numpy.testing as npt
import pytest

from hetgplvm import (
    BERNOULLI,
    GAUSSIAN,
    ColumnSchema,
    HeterogeneousDataset,
    InputError,
    KernelHypers,
    SharedLikelihoodParams,
    binarize_half,
    categorical,
    load_dataset,
    load_schema,
    sample_generative,
    save_dataset,
    smooth_random_images,
)

from conftest import mixed_schema


class TestSchemaFile:
    def test_round_trip(self, tmp_path):
        schema = mixed_schema(2, 1, 1, 1, 1, cat_k=4)
        path = tmp_path / "schema.json"
        from hetgplvm import save_schema

        save_schema(schema, path)
        assert load_schema(path) == schema

    def test_unknown_kind_string(self, tmp_path):
        path = tmp_path / "schema.json"
        path.write_text('{"columns": [{"name": "a", "kind": "lognormal"}]}')
        with pytest.raises(InputError):
            load_schema(path)

    def test_duplicate_names(self, tmp_path):
        path = tmp_path / "schema.json"
        path.write_text(
            '{"columns": [{"name": "a", "kind": "gaussian"},'
            ' {"name": "a", "kind": "poisson"}]}'
        )
        with pytest.raises(InputError):
            load_schema(path)


def _write_pair(tmp_path, csv_text, schema_text):
    data = tmp_path / "d.csv"
    schema = tmp_path / "s.json"
    data.write_text(csv_text)
    schema.write_text(schema_text)
    return data, schema


BASIC_SCHEMA = (
    '{"columns": [{"name": "g", "kind": "gaussian"},'
    ' {"name": "b", "kind": "bernoulli"},'
    ' {"name": "be", "kind": "beta"}]}'
)


class TestLoadDataset:
    def test_empty_cell_and_na_become_missing(self, tmp_path):
        ds = load_dataset(
            *_write_pair(tmp_path, "g,b,be\n1.5,,0.25\nNA,1,0.5\n", BASIC_SCHEMA)
        )
        npt.assert_array_equal(ds.mask, [[True, False, True], [False, True, True]])
        assert ds.values[0, 0] == 1.5
        assert ds.values[1, 1] == 1.0

    def test_support_violation_names_the_cell(self, tmp_path):
        files = _write_pair(tmp_path, "g,b,be\n0.0,2,0.5\n", BASIC_SCHEMA)
        with pytest.raises(InputError, match="row 0.*b"):
            load_dataset(*files)

    def test_beta_boundary_clamped(self, tmp_path):
        ds = load_dataset(
            *_write_pair(tmp_path, "g,b,be\n0.0,1,0.0\n0.0,0,1.0\n", BASIC_SCHEMA)
        )
        assert ds.values[0, 2] == pytest.approx(1e-6)
        assert ds.values[1, 2] == pytest.approx(1.0 - 1e-6)

    def test_beta_outside_unit_interval_rejected(self, tmp_path):
        files = _write_pair(tmp_path, "g,b,be\n0.0,1,1.2\n", BASIC_SCHEMA)
        with pytest.raises(InputError):
            load_dataset(*files)

    def test_header_mismatch(self, tmp_path):
        files = _write_pair(tmp_path, "x,b,be\n0.0,1,0.5\n", BASIC_SCHEMA)
        with pytest.raises(InputError, match="header"):
            load_dataset(*files)

    def test_ragged_row(self, tmp_path):
        files = _write_pair(tmp_path, "g,b,be\n0.0,1\n", BASIC_SCHEMA)
        with pytest.raises(InputError, match="row 0"):
            load_dataset(*files)

    def test_categorical_round_and_range(self, tmp_path):
        schema = '{"columns": [{"name": "c", "kind": "categorical:3"}]}'
        ds = load_dataset(*_write_pair(tmp_path, "c\n1\n3\n", schema))
        npt.assert_array_equal(ds.values[:, 0], [1.0, 3.0])
        with pytest.raises(InputError):
            load_dataset(*_write_pair(tmp_path, "c\n4\n", schema))


class TestRoundTrip:
    def test_save_load_identity(self, tmp_path, rng):
        schema = mixed_schema(2, 2, 1, 1, 1, cat_k=3)
        ds, _ = sample_generative(25, schema, KernelHypers(1.0, np.ones(2)),
                                  seed=5, missing_rate=0.2)
        csv_path, schema_path = tmp_path / "d.csv", tmp_path / "s.json"
        save_dataset(ds, csv_path, schema_path)
        loaded = load_dataset(csv_path, schema_path)
        assert loaded.schema == ds.schema
        npt.assert_array_equal(loaded.mask, ds.mask)
        npt.assert_array_equal(loaded.values[ds.mask], ds.values[ds.mask])

    def test_second_round_trip_is_byte_identical(self, tmp_path, rng):
        schema = mixed_schema(1, 1, 1)
        ds, _ = sample_generative(10, schema, seed=2, missing_rate=0.3)
        first_csv = tmp_path / "a.csv"
        save_dataset(ds, first_csv, tmp_path / "a.json")
        loaded = load_dataset(first_csv, tmp_path / "a.json")
        second_csv = tmp_path / "b.csv"
        save_dataset(loaded, second_csv, tmp_path / "b.json")
        assert first_csv.read_bytes() == second_csv.read_bytes()
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


class TestSampleGenerative:
    def test_same_seed_identical(self):
        schema = mixed_schema(1, 1, 0)
        a, xa = sample_generative(20, schema, seed=9)
        b, xb = sample_generative(20, schema, seed=9)
        npt.assert_array_equal(a.values, b.values)
        npt.assert_array_equal(xa, xb)

    def test_vanishing_signal_gives_pure_noise(self):
        # with signal variance ~ 0 the gaussian column is N(0, sigma^2) noise
        schema = (ColumnSchema("g", GAUSSIAN),)
        shared = SharedLikelihoodParams(gaussian_variance=2.0)
        ds, _ = sample_generative(
            1000, schema, KernelHypers(1e-12, np.ones(2)), shared, seed=4
        )
        assert ds.values[:, 0].var() == pytest.approx(2.0, rel=0.1)
        assert abs(ds.values[:, 0].mean()) < 0.15

    def test_sigmoid_saturation_on_strong_signal(self):
        # where the latent function exceeds 5, sigmoid(f) > 0.993, so the
        # observed 1s fraction among those rows must be > 0.99
        schema = (ColumnSchema("b", BERNOULLI),)
        ones, total = 0.0, 0
        for seed in range(30):
            ds, _, funcs = sample_generative(
                200, schema, KernelHypers(25.0, np.ones(1)), seed=seed,
                return_latent_functions=True,
            )
            high = funcs[:, 0] > 5.0
            ones += ds.values[high, 0].sum()
            total += int(high.sum())
        assert total > 300
        assert ones / total > 0.99

    def test_row_cap(self):
        with pytest.raises(InputError):
            sample_generative(2001, mixed_schema(1, 0, 0))

    def test_output_validates_against_schema(self, tmp_path):
        schema = mixed_schema(1, 1, 1, 1, 1, cat_k=4)
        ds, _ = sample_generative(30, schema, seed=12, missing_rate=0.1)
        save_dataset(ds, tmp_path / "d.csv", tmp_path / "s.json")
        load_dataset(tmp_path / "d.csv", tmp_path / "s.json")  # raises on violation


class TestBinarizeHalf:
    def test_degenerate_probabilities(self):
        matrix = np.tile([[0.0, 1.0, 0.3, 0.9]], (50, 1))
        ds = binarize_half(matrix, seed=1)
        assert np.all(ds.values[:, 0] == 0.0)
        assert np.all(ds.values[:, 1] == 1.0)

    def test_split_rule_and_schema(self):
        ds = binarize_half(np.random.default_rng(0).uniform(size=(5, 4)), seed=0)
        tags = [c.kind.tag for c in ds.schema]
        assert tags == ["bernoulli", "bernoulli", "gaussian", "gaussian"]
        ds5 = binarize_half(np.random.default_rng(0).uniform(size=(5, 5)), seed=0)
        tags5 = [c.kind.tag for c in ds5.schema]
        assert tags5 == ["bernoulli"] * 3 + ["gaussian"] * 2

    def test_empirical_rate_at_half(self):
        matrix = np.full((10**4, 2), 0.5)
        ds = binarize_half(matrix, seed=3)
        assert ds.values[:, 0].mean() == pytest.approx(0.5, abs=0.02)

    def test_gaussian_half_untouched(self, rng):
        matrix = rng.uniform(size=(20, 6))
        ds = binarize_half(matrix, seed=0)
        npt.assert_array_equal(ds.values[:, 3:], matrix[:, 3:])

    def test_out_of_range_rejected(self):
        with pytest.raises(InputError):
            binarize_half(np.array([[0.5, 1.2]]))


class TestMaskSemantics:
    def test_masked_values_are_inert_downstream(self):
        # flipping a masked cell must not change any likelihood-path number;
        # exercised end to end in test_objective, here just the container
        values = np.array([[1.0, 7.0], [0.5, 0.0]])
        mask = np.array([[True, False], [True, True]])
        schema = mixed_schema(2, 0, 0)
        ds = HeterogeneousDataset(values, mask, schema)
        assert ds.mask[0, 1] == False  # noqa: E712

    def test_shape_checks(self):
        with pytest.raises(InputError):
            HeterogeneousDataset(np.zeros((2, 2)), np.zeros((2, 3), dtype=bool),
                                 mixed_schema(2, 0, 0))


class TestSmoothImages:
    def test_shapes_range_and_determinism(self):
        images, labels = smooth_random_images(12, side=14, n_classes=3, seed=6)
        assert images.shape == (12, 196)
        assert labels.shape == (12,)
        assert np.all((images >= 0) & (images <= 1))
        again, lab2 = smooth_random_images(12, side=14, n_classes=3, seed=6)
        npt.assert_array_equal(images, again)
        npt.assert_array_equal(labels, lab2)

    def test_classes_are_separable_in_pixel_space(self):
        images, labels = smooth_random_images(60, side=12, n_classes=3, seed=1)
        centroids = np.stack([images[labels == c].mean(axis=0) for c in range(3)])
        within = np.mean(
            [
                np.linalg.norm(images[i] - centroids[labels[i]])
                for i in range(len(labels))
            ]
        )
        between = np.mean(
            [
                np.linalg.norm(centroids[a] - centroids[b])
                for a in range(3) for b in range(a + 1, 3)
            ]
        )
        assert between > within
