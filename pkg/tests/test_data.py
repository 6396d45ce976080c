import gzip
import struct

import numpy as np
import pytest
import torch

from supmatch.data import (
    BIAS_TABLES,
    BiasTable,
    LabeledDataset,
    PALETTE,
    UnlabeledDataset,
    apply_bias,
    balance_test_set,
    build_adult,
    build_colored_mnist,
    build_colored_split,
    build_synthetic_gmm,
    colorize,
    load_mnist_idx,
    synthesize_adult_like,
)
from supmatch.data.colored_mnist import load_digit_corpus
from supmatch.exceptions import HiddenLabelError, IngestionError, ValidationError


def make_dataset(counts, seed=0):
    """counts: {(s, y): n}"""
    rng = np.random.default_rng(seed)
    xs, ss, ys = [], [], []
    for (s, y), n in counts.items():
        xs.append(rng.normal(size=(n, 4)))
        ss.extend([s] * n)
        ys.extend([y] * n)
    return LabeledDataset(np.concatenate(xs), ss, ys)


class TestBiasTables:
    def test_sb_training_table_matches_canonical_values(self):
        table = BIAS_TABLES[("sb", "train")]
        assert table.proportion(0, 0) == 1.0  # (2, purple)
        assert table.proportion(1, 0) == 0.3  # (2, green)
        assert table.proportion(0, 1) == 0.0  # (4, purple): the missing source
        assert table.proportion(1, 1) == 1.0  # (4, green)

    def test_sb_deployment_table(self):
        table = BIAS_TABLES[("sb", "deployment")]
        assert [table.proportion(s, y) for y in (0, 1) for s in (0, 1)] == [0.7, 0.4, 0.2, 1.0]

    def test_ms_training_table(self):
        table = BIAS_TABLES[("ms", "train")]
        assert table.proportion(0, 0) == 0.0
        assert table.proportion(1, 0) == 0.85
        assert table.proportion(0, 1) == 0.0
        assert table.proportion(1, 1) == 1.0

    def test_proportion_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            BiasTable({(0, 0): 1.2})


class TestApplyBias:
    def test_counts_follow_round_rule_exactly(self):
        ds = make_dataset({(0, 0): 100, (1, 0): 41, (0, 1): 7, (1, 1): 55})
        table = BiasTable({(0, 0): 0.33, (1, 0): 0.5, (0, 1): 1.0, (1, 1): 0.0})
        out = apply_bias(ds, table, seed=3)
        counts = out.source_counts()
        assert counts[(0, 0)] == round(0.33 * 100)
        assert counts[(1, 0)] == round(0.5 * 41)
        assert counts[(0, 1)] == 7
        assert counts[(1, 1)] == 0

    def test_identity_with_unit_proportions(self):
        ds = make_dataset({(0, 0): 10, (1, 0): 12, (0, 1): 9, (1, 1): 4})
        table = BiasTable({key: 1.0 for key in ds.source_counts()})
        out = apply_bias(ds, table, seed=0)
        assert len(out) == len(ds)
        assert torch.equal(out.features, ds.features)

    def test_deterministic_per_seed(self):
        ds = make_dataset({(0, 0): 50, (1, 0): 50, (0, 1): 50, (1, 1): 50})
        table = BiasTable({key: 0.4 for key in ds.source_counts()})
        a = apply_bias(ds, table, seed=9)
        b = apply_bias(ds, table, seed=9)
        assert torch.equal(a.features, b.features)

    def test_missing_table_entry_rejected(self):
        ds = make_dataset({(0, 0): 5, (1, 0): 5, (0, 1): 5, (1, 1): 5})
        with pytest.raises(ValidationError, match="no entry"):
            apply_bias(ds, BiasTable({(0, 0): 1.0}), seed=0)


class TestBalanceTestSet:
    def test_min_rule(self):
        ds = make_dataset({(0, 0): 100, (1, 0): 40, (0, 1): 70, (1, 1): 55})
        out = balance_test_set(ds, seed=0)
        assert set(out.source_counts().values()) == {40}
        assert len(out) == 4 * 40

    def test_majority_classifier_scores_half(self):
        ds = make_dataset({(0, 0): 80, (1, 0): 33, (0, 1): 51, (1, 1): 47})
        out = balance_test_set(ds, seed=1)
        majority = np.zeros(len(out), dtype=np.int64)
        assert (majority == out.y).mean() == 0.5

    def test_empty_quadrant_rejected(self):
        ds = make_dataset({(0, 0): 5, (1, 0): 5, (0, 1): 5, (1, 1): 5})
        table = BiasTable({(0, 0): 1.0, (1, 0): 1.0, (0, 1): 0.0, (1, 1): 1.0})
        biased = apply_bias(ds, table, seed=0)
        with pytest.raises(ValidationError, match="empty sources"):
            balance_test_set(biased, seed=0)


class TestColorize:
    def test_black_canvas_stays_black(self):
        gray = np.zeros((3, 8, 8), dtype=np.float32)
        out = colorize(gray, np.array([0, 4, 9]))
        assert out.shape == (3, 3, 8, 8)
        assert np.all(out == 0)

    def test_channels_scale_by_palette(self):
        gray = np.ones((1, 2, 2), dtype=np.float32) * 0.5
        out = colorize(gray, np.array([1]))
        expected = 0.5 * PALETTE[1]
        assert np.allclose(out[0, :, 0, 0], expected)

    def test_output_shape_and_padding(self):
        _, _, test_x, test_y = load_digit_corpus()[:4]
        ds = build_colored_split(test_x, test_y, digits=(2, 4), n_colors=2, seed=0)
        assert tuple(ds.features.shape[1:]) == (3, 32, 32)
        # zero padding: border pixels exactly 0
        assert float(ds.features[:, :, 0, :].abs().max()) == 0.0
        assert float(ds.features[:, :, :, -1].abs().max()) == 0.0
        assert float(ds.features.min()) >= 0.0 and float(ds.features.max()) <= 1.0


class TestColoredDigitBuild:
    def test_sources_present_in_deployment_but_sb_missing_in_train(self):
        train, dep, test, manifest = build_colored_mnist(setting="sb", seed=0)
        counts = train.source_counts()
        assert counts[(0, 1)] == 0  # purple 4 missing
        assert counts[(0, 0)] > 0 and counts[(1, 0)] > 0 and counts[(1, 1)] > 0
        labeled_dep = dep.as_labeled()
        assert all(v > 0 for v in labeled_dep.source_counts().values())
        assert set(np.unique(test.y)) == {0, 1}

    def test_ms_leaves_single_subgroup(self):
        train, _, _, _ = build_colored_mnist(setting="ms", seed=0)
        assert set(np.unique(train.s)) == {1}

    def test_balanced_test_quadrants(self):
        _, _, test, _ = build_colored_mnist(setting="sb", seed=1)
        assert len(set(test.source_counts().values())) == 1

    def test_deterministic_color_assignment(self):
        a = build_colored_mnist(setting="sb", seed=5)[0]
        b = build_colored_mnist(setting="sb", seed=5)[0]
        assert torch.equal(a.features, b.features)
        assert np.array_equal(a.s, b.s)

    def test_three_digit_variant_removes_missing_sources_outright(self):
        # colors: purple=0, green=1, blue=2; missing green 2s, blue 2s,
        # blue 4s, green 6s in class indices (digit order 2, 4, 6)
        missing = [(1, 0), (2, 0), (2, 1), (1, 2)]
        train, dep, test, _ = build_colored_mnist(
            digits=(2, 4, 6), n_colors=3, setting="none", seed=0, missing_sources=missing
        )
        counts = train.source_counts()
        for source in missing:
            assert counts[source] == 0
        assert all(v > 0 for v in dep.as_labeled().source_counts().values())


class TestIdxParser:
    def _write_idx(self, path, array):
        array = np.asarray(array, dtype=np.uint8)
        header = struct.pack(">BBBB", 0, 0, 0x08, array.ndim)
        header += struct.pack(f">{array.ndim}I", *array.shape)
        path.write_bytes(header + array.tobytes())

    def test_round_trip(self, tmp_path):
        images = (np.arange(2 * 28 * 28) % 255).reshape(2, 28, 28).astype(np.uint8)
        labels = np.array([3, 7], dtype=np.uint8)
        self._write_idx(tmp_path / "train-images-idx3-ubyte", images)
        self._write_idx(tmp_path / "train-labels-idx1-ubyte", labels)
        self._write_idx(tmp_path / "t10k-images-idx3-ubyte", images)
        self._write_idx(tmp_path / "t10k-labels-idx1-ubyte", labels)
        tr_x, tr_y, te_x, te_y = load_mnist_idx(tmp_path)
        assert tr_x.shape == (2, 28, 28)
        assert tr_x.max() <= 1.0
        assert np.array_equal(tr_y, [3, 7])

    def test_gzip_supported(self, tmp_path):
        images = np.zeros((1, 28, 28), dtype=np.uint8)
        labels = np.array([1], dtype=np.uint8)
        for stem, arr in [
            ("train-images-idx3-ubyte", images), ("train-labels-idx1-ubyte", labels),
            ("t10k-images-idx3-ubyte", images), ("t10k-labels-idx1-ubyte", labels),
        ]:
            header = struct.pack(">BBBB", 0, 0, 0x08, arr.ndim)
            header += struct.pack(f">{arr.ndim}I", *arr.shape)
            (tmp_path / f"{stem}.gz").write_bytes(gzip.compress(header + arr.tobytes()))
        tr_x, tr_y, _, _ = load_mnist_idx(tmp_path)
        assert tr_y[0] == 1

    def test_missing_files_give_remediation_hint(self, tmp_path):
        with pytest.raises(IngestionError, match="SUPMATCH_DATA_ROOT"):
            load_mnist_idx(tmp_path)


@pytest.fixture(scope="module")
def adult_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("adult") / "adult.data"
    synthesize_adult_like(4000, seed=0, path=path)
    return path


class TestAdult:
    def test_base_rates_match_documented_gap(self, adult_csv):
        df = synthesize_adult_like(20000, seed=1)
        male = df["sex"] == "Male"
        high = df["income"] == ">50K"
        assert abs(high[male].mean() - 0.30) < 0.02
        assert abs(high[~male].mean() - 0.11) < 0.02

    def test_sb_split_has_no_high_income_females_in_train(self, adult_csv):
        train, dep, _, _ = build_adult(adult_csv, setting="sb", seed=0)
        assert train.source_counts()[(0, 1)] == 0
        assert dep.as_labeled().source_counts()[(0, 1)] > 0

    def test_ms_split_removes_females_entirely(self, adult_csv):
        train, _, _, _ = build_adult(adult_csv, setting="ms", seed=0)
        assert set(np.unique(train.s)) == {1}

    def test_feature_width_recorded_and_consistent(self, adult_csv):
        train, _, _, manifest = build_adult(adult_csv, setting="sb", seed=0)
        assert train.features.shape[1] == manifest["feature_width"]
        blocks = manifest["feature_blocks"]
        assert blocks[0][0] == "continuous"
        assert blocks[-1][2] == manifest["feature_width"]

    def test_test_set_quadrant_balanced(self, adult_csv):
        _, _, test, _ = build_adult(adult_csv, setting="sb", seed=0)
        assert len(set(test.source_counts().values())) == 1

    def test_schema_mismatch_reported(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("1,2,3\n4,5,6\n")
        with pytest.raises(IngestionError, match="columns"):
            build_adult(bad)


class TestSyntheticGmm:
    def test_nearest_mean_classification(self):
        train, _, _ = build_synthetic_gmm(cov_scale=0.01, n_per_source=200, seed=0)
        from supmatch.data.synthetic import default_source_means

        means = default_source_means(2, 2, 2)
        x = train.features.numpy()
        source = train.y * 2 + train.s
        predicted = np.argmin(
            np.linalg.norm(x[:, None, :] - means[None, :, :], axis=-1), axis=1
        )
        assert (predicted == source).mean() >= 0.99

    def test_zero_covariance_collapses_to_means(self):
        train, _, _ = build_synthetic_gmm(cov_scale=0.0, n_per_source=5, seed=0)
        assert len(np.unique(train.features.numpy().round(9), axis=0)) == 4

    def test_per_source_count_exact(self):
        train, dep, test = build_synthetic_gmm(n_per_source=17, seed=0)
        assert set(train.source_counts().values()) == {17}
        assert len(dep) == 4 * 17 and len(test) == 4 * 17

    def test_negative_covariance_rejected(self):
        with pytest.raises(ValidationError):
            build_synthetic_gmm(cov_scale=-1.0)


class TestHiddenLabelGate:
    def test_direct_access_raises(self):
        dep = UnlabeledDataset(np.zeros((4, 3)), [0, 1, 0, 1], [0, 0, 1, 1])
        with pytest.raises(HiddenLabelError):
            _ = dep.hidden_s
        with pytest.raises(HiddenLabelError):
            _ = dep.hidden_y

    def test_oracle_context_unlocks_and_counts(self):
        dep = UnlabeledDataset(np.zeros((4, 3)), [0, 1, 0, 1], [0, 0, 1, 1])
        with dep.oracle_labels():
            assert dep.hidden_s.tolist() == [0, 1, 0, 1]
        assert dep.oracle_reads == 1
        with pytest.raises(HiddenLabelError):
            _ = dep.hidden_s
