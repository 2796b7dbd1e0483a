"""Evaluation metrics against hand-computed fixtures."""

import numpy as np
import pytest

from bstkit.errors import ValidationError
from bstkit.metrics import (
    EvalReport,
    compute_metrics,
    emit_confusion_plot,
    top_k_predictions,
)


def one_hot(preds, k):
    probs = np.zeros((len(preds), k))
    probs[np.arange(len(preds)), preds] = 1.0
    return probs


class TestComputeMetrics:
    def test_all_correct(self):
        labels = np.array([0, 1, 2, 1])
        report = compute_metrics(one_hot(labels, 3), labels)
        assert report.accuracy == 1.0
        assert report.macro_f1 == 1.0
        assert report.min_f1 == 1.0
        assert (report.confusion == np.diag([1, 2, 1])).all()

    def test_hand_computed_three_class_fixture(self):
        labels = np.array([0, 0, 1, 2])
        preds = np.array([0, 1, 1, 2])
        report = compute_metrics(one_hot(preds, 3), labels)
        assert report.accuracy == pytest.approx(0.75, abs=1e-12)
        assert report.per_class_f1 == pytest.approx(
            (2 / 3, 2 / 3, 1.0), abs=1e-12
        )
        assert report.macro_f1 == pytest.approx(7 / 9, abs=1e-12)
        assert report.min_f1 == pytest.approx(2 / 3, abs=1e-12)
        assert report.n_samples == 4

    def test_top2_when_label_always_second(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 4, size=50)
        probs = rng.uniform(0.01, 0.4, size=(50, 4))
        for i, c in enumerate(labels):
            probs[i, c] = 0.45  # below the winner, above the rest
            probs[i, (c + 1) % 4] = 0.5
        probs /= probs.sum(axis=1, keepdims=True)
        report = compute_metrics(probs, labels)
        assert report.top2_accuracy == 1.0
        assert report.accuracy == 0.0

    def test_top2_ties_broken_by_lower_class_index(self):
        probs = np.array([[0.25, 0.25, 0.25, 0.25]])
        assert top_k_predictions(probs, 2).tolist() == [[0, 1]]

    def test_absent_class_gets_zero_f1_and_warning(self):
        labels = np.array([0, 0, 1])
        preds = np.array([0, 0, 1])
        with pytest.warns(UserWarning, match="class 2"):
            report = compute_metrics(one_hot(preds, 3), labels)
        assert report.per_class_f1[2] == 0.0
        assert report.min_f1 == 0.0

    def test_normalized_matrix_sums(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 5, size=200)
        probs = rng.dirichlet(np.ones(5), size=200)
        report = compute_metrics(probs, labels)
        assert report.confusion.sum() == 200
        row_sums = report.row_normalized.sum(axis=1)
        nonempty = report.confusion.sum(axis=1) > 0
        np.testing.assert_allclose(row_sums[nonempty], 1.0, atol=1e-12)
        col_sums = report.column_normalized.sum(axis=0)
        nonempty_cols = report.confusion.sum(axis=0) > 0
        np.testing.assert_allclose(col_sums[nonempty_cols], 1.0, atol=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 4, size=100)
        probs = rng.dirichlet(np.ones(4), size=100)
        base = compute_metrics(probs, labels)
        perm = rng.permutation(100)
        shuffled = compute_metrics(probs[perm], labels[perm])
        assert base.accuracy == shuffled.accuracy
        assert base.macro_f1 == shuffled.macro_f1
        assert (base.confusion == shuffled.confusion).all()

    def test_min_le_macro(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            labels = rng.integers(0, 3, size=30)
            probs = rng.dirichlet(np.ones(3), size=30)
            report = compute_metrics(probs, labels)
            assert report.min_f1 <= report.macro_f1 + 1e-15

    def test_label_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            compute_metrics(one_hot([0, 1], 2), np.array([0, 2]))


class TestReportIO:
    def test_round_trip(self, tmp_path):
        labels = np.array([0, 0, 1, 2])
        report = compute_metrics(one_hot([0, 1, 1, 2], 3), labels, class_names="abc")
        path = tmp_path / "report.json"
        report.save(path)
        loaded = EvalReport.load(path)
        assert loaded.accuracy == report.accuracy
        assert loaded.per_class_f1 == report.per_class_f1
        assert (loaded.confusion == report.confusion).all()
        assert loaded.class_names == ("a", "b", "c")

    def test_save_is_byte_deterministic(self, tmp_path):
        labels = np.array([0, 1, 1])
        report = compute_metrics(one_hot([0, 1, 0], 2), labels)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        report.save(a)
        report.save(b)
        assert a.read_bytes() == b.read_bytes()


class TestConfusionPlot:
    def test_identity_confusion_renders(self, tmp_path):
        labels = np.array([0, 1, 2])
        report = compute_metrics(one_hot(labels, 3), labels)
        written = emit_confusion_plot(report, tmp_path / "cm.png")
        assert all(p.exists() for p in written)

    def test_sidecar_matches_report_values(self, tmp_path):
        labels = np.array([0, 0, 1, 2])
        report = compute_metrics(one_hot([0, 1, 1, 2], 3), labels)
        written = emit_confusion_plot(report, tmp_path / "cm.png")
        col_csv = next(p for p in written if "column" in p.name)
        values = np.loadtxt(col_csv, delimiter=",", skiprows=1)
        np.testing.assert_allclose(values, report.column_normalized, atol=1e-9)

    def test_empty_class_row_renders_zeros_not_nan(self, tmp_path):
        labels = np.array([0, 0, 1])
        with pytest.warns(UserWarning):
            report = compute_metrics(one_hot([0, 0, 1], 3), labels)
        assert not np.isnan(report.row_normalized).any()
        assert (report.row_normalized[2] == 0).all()
        emit_confusion_plot(report, tmp_path / "cm.png")
