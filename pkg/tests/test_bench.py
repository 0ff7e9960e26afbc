"""Tests for the synthetic benchmark generator and table I/O."""

import numpy as np
import pytest

from energy_ood.bench import (
    BenchmarkSpec,
    LabeledDataset,
    assemble_scores,
    default_class_means,
    generate,
    load_table,
    write_table,
)
from energy_ood.errors import InputError, TableParseError
from energy_ood.metrics import auroc
from energy_ood.mlp import MlpConfig, MlpModel


def equal_datasets(a, b):
    if not np.array_equal(a.inputs, b.inputs):
        return False
    if (a.labels is None) != (b.labels is None):
        return False
    return a.labels is None or np.array_equal(a.labels, b.labels)


class TestSpec:
    def test_default_means_on_axes(self):
        means = default_class_means(2, 2, 4.0)
        np.testing.assert_array_equal(means, [[4.0, 0.0], [0.0, 4.0]])

    def test_more_classes_than_dims_stay_distinct(self):
        means = default_class_means(5, 2, 3.0)
        assert len({tuple(m) for m in means}) == 5

    def test_zero_count_rejected(self):
        with pytest.raises(InputError):
            BenchmarkSpec(n_test_in=0)

    def test_bad_std_rejected(self):
        with pytest.raises(InputError):
            BenchmarkSpec(in_std=0.0)

    def test_json_round_trip(self):
        spec = BenchmarkSpec(k_classes=3, dim=4, seed=11, ood_kind="uniform_box")
        again = BenchmarkSpec.from_json_dict(spec.to_json_dict())
        assert again.seed == 11
        assert again.ood_kind == "uniform_box"
        np.testing.assert_array_equal(again.class_means, spec.class_means)

    def test_manifest_names_prng(self):
        m = BenchmarkSpec().manifest()
        assert m["prng_name"] == "numpy-philox4x64-jumped"
        assert "spec" in m and "version" in m


class TestGenerate:
    def test_deterministic(self):
        spec = BenchmarkSpec(n_train_in=50, n_train_out=50, n_test_in=30, n_test_out=30)
        a = generate(spec)
        b = generate(spec)
        for split in ("train_in", "train_out", "test_in", "test_out"):
            assert equal_datasets(getattr(a, split), getattr(b, split))

    def test_seed_changes_data(self):
        small = dict(n_train_in=50, n_train_out=50, n_test_in=30, n_test_out=30)
        a = generate(BenchmarkSpec(seed=1, **small))
        b = generate(BenchmarkSpec(seed=2, **small))
        assert not np.array_equal(a.train_in.inputs, b.train_in.inputs)

    def test_outlier_streams_disjoint(self):
        """train_out and test_out never share draws, for several seeds."""
        for seed in range(5):
            spec = BenchmarkSpec(
                seed=seed, n_train_in=10, n_train_out=40, n_test_in=10, n_test_out=40
            )
            data = generate(spec)
            a = data.train_out.inputs[:40]
            b = data.test_out.inputs[:40]
            assert not np.array_equal(a, b)
            # no single row coincides either
            assert not any(np.array_equal(ra, rb) for ra in a for rb in b)

    def test_shapes_and_labels(self):
        spec = BenchmarkSpec(n_train_in=64, n_train_out=32, n_test_in=16, n_test_out=8)
        data = generate(spec)
        assert data.train_in.inputs.shape == (64, 2)
        assert data.train_in.labels.shape == (64,)
        assert data.train_out.labels is None
        assert set(np.unique(data.train_in.labels)) <= {0, 1}

    def test_empirical_means_match_spec(self):
        """Class means of the default seeded draw land near the spec means."""
        data = generate(BenchmarkSpec())
        spec = BenchmarkSpec()
        for c in range(2):
            rows = data.train_in.inputs[data.train_in.labels == c]
            assert np.abs(rows.mean(axis=0) - spec.class_means[c]).max() < 0.1

    def test_empirical_std_within_five_sigma_at_1e4(self):
        spec = BenchmarkSpec(n_train_in=10000, k_classes=2, dim=2)
        data = generate(spec)
        for c in range(2):
            rows = data.train_in.inputs[data.train_in.labels == c]
            n = rows.shape[0]
            # mean standard error is in_std/sqrt(n); allow 5 sigma
            err = np.abs(rows.mean(axis=0) - spec.class_means[c]).max()
            assert err < 5.0 * spec.in_std / np.sqrt(n)

    def test_ring_radii_in_band(self):
        data = generate(BenchmarkSpec(n_train_out=500))
        radii = np.linalg.norm(data.train_out.inputs, axis=1)
        assert radii.min() >= 10.0
        assert radii.max() <= 12.0

    def test_uniform_box_bounds(self):
        data = generate(BenchmarkSpec(ood_kind="uniform_box", n_test_out=500))
        assert np.abs(data.test_out.inputs).max() <= 15.0

    def test_shifted_gaussian_center(self):
        data = generate(BenchmarkSpec(ood_kind="shifted_gaussian", n_test_out=2000))
        center = data.test_out.inputs.mean(axis=0)
        np.testing.assert_allclose(center, [-10.0, 0.0], atol=0.2)


class TestTableIO:
    @staticmethod
    def _sample():
        spec = BenchmarkSpec(n_train_in=20, n_train_out=15, n_test_in=5, n_test_out=5)
        data = generate(spec)
        return data.train_in, data.train_out

    @pytest.mark.parametrize("fmt", ["csv", "raw64"])
    def test_round_trip_bit_exact(self, tmp_path, fmt):
        in_data, out_data = self._sample()
        path = tmp_path / f"table.{fmt}"
        write_table(path, in_data, out_data, fmt)
        in_back, out_back = load_table(path, fmt)
        assert equal_datasets(in_data, in_back)
        assert equal_datasets(out_data, out_back)

    def test_csv_wrong_width_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("split,label,v0,v1\nin,0,1.0,2.0\nin,1,3.0\n")
        with pytest.raises(TableParseError) as err:
            load_table(path, "csv")
        assert "line 3" in str(err.value)

    def test_csv_non_numeric_cell_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("split,label,v0\nin,0,1.0\nout,,abc\n")
        with pytest.raises(TableParseError) as err:
            load_table(path, "csv")
        assert "line 3" in str(err.value)

    def test_csv_bad_split_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("split,label,v0\nmaybe,0,1.0\nout,,2.0\n")
        with pytest.raises(TableParseError):
            load_table(path, "csv")

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(TableParseError):
            load_table(path, "csv")

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(TableParseError):
            load_table(path, "csv")

    def test_raw64_missing_sidecar(self, tmp_path):
        path = tmp_path / "data.raw64"
        path.write_bytes(b"\x00" * 16)
        with pytest.raises(TableParseError):
            load_table(path, "raw64")

    def test_raw64_size_mismatch(self, tmp_path):
        in_data, out_data = self._sample()
        path = tmp_path / "data.raw64"
        write_table(path, in_data, out_data, "raw64")
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(TableParseError):
            load_table(path, "raw64")


class TestAssembleScores:
    @staticmethod
    def _identity_model(k):
        cfg = MlpConfig((k, k))
        return MlpModel(config=cfg, weights=[np.eye(k)], biases=[np.zeros(k)])

    def test_purity_and_counts(self):
        data = generate(BenchmarkSpec(n_test_in=40, n_test_out=30))
        model = self._identity_model(2)
        a = assemble_scores(model, data.test_in, data.test_out, "neg_energy")
        b = assemble_scores(model, data.test_in, data.test_out, "neg_energy")
        np.testing.assert_array_equal(a.in_scores, b.in_scores)
        msp = assemble_scores(model, data.test_in, data.test_out, "msp")
        assert (msp.n_in, msp.n_out) == (a.n_in, a.n_out) == (40, 30)

    def test_separable_by_construction_gives_auroc_one(self):
        """A scorer that sees the (known) generative structure separates fully."""
        data = generate(BenchmarkSpec())

        def oracle_logits(rows):
            # distance-to-nearest-mean logits: outliers on the far ring get
            # hugely negative logsumexp, in-distribution rows do not
            means = BenchmarkSpec().class_means
            d = ((rows[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
            return -d

        scores = assemble_scores(oracle_logits, data.test_in, data.test_out, "neg_energy")
        assert auroc(scores) == 1.0

    def test_callable_and_model_agree(self):
        data = generate(BenchmarkSpec(n_test_in=10, n_test_out=10))
        model = self._identity_model(2)
        via_model = assemble_scores(model, data.test_in, data.test_out, "neg_energy")
        via_callable = assemble_scores(
            lambda rows: rows, data.test_in, data.test_out, "neg_energy"
        )
        np.testing.assert_array_equal(via_model.in_scores, via_callable.in_scores)

    def test_unknown_kind_rejected(self):
        data = generate(BenchmarkSpec(n_test_in=5, n_test_out=5))
        with pytest.raises(InputError):
            assemble_scores(self._identity_model(2), data.test_in, data.test_out, "mahalanobis")
