"""Metric tests: rank AUC against exhaustive pair counting, threshold
metrics against confusion-matrix arithmetic, and regression scores."""

from __future__ import annotations

import numpy as np
import pytest

from nanocorona.boxcox import BoxCoxTransform, boxcox_apply
from nanocorona.errors import ZeroVarianceError
from nanocorona.metrics import (
    AUC_UNDEFINED,
    classification_metrics,
    rank_auc,
    regression_metrics,
)


def pairwise_auc(scores, labels):
    """O(n^2) pair counting: wins + half-credit for ties."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestRankAuc:
    def test_matches_pair_counting_on_random_batches(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            n = int(rng.integers(10, 200))
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            # quantized scores force plenty of ties
            scores = np.round(rng.uniform(0, 1, n), 1)
            assert rank_auc(scores, labels) == \
                pytest.approx(pairwise_auc(scores, labels), abs=1e-12)

    def test_perfect_and_inverted(self):
        labels = np.array([0, 0, 1, 1])
        assert rank_auc(np.array([0.1, 0.2, 0.8, 0.9]), labels) == 1.0
        assert rank_auc(np.array([0.9, 0.8, 0.2, 0.1]), labels) == 0.0

    def test_all_tied_is_half(self):
        assert rank_auc(np.full(10, 0.5),
                        np.array([0, 1] * 5)) == pytest.approx(0.5)

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(1)
        scores = rng.uniform(-2, 2, 300)
        labels = rng.integers(0, 2, 300)
        transformed = scores ** 3 + scores  # strictly increasing
        assert rank_auc(scores, labels) == \
            pytest.approx(rank_auc(transformed, labels), abs=1e-12)

    def test_single_class_undefined(self):
        assert rank_auc(np.array([0.1, 0.9]), np.array([1, 1])) \
            is AUC_UNDEFINED
        assert rank_auc(np.array([0.1, 0.9]), np.array([0, 0])) \
            is AUC_UNDEFINED


class TestClassificationMetrics:
    def test_hand_checked_confusion(self):
        scores = np.array([0.9, 0.8, 0.3, 0.6, 0.2])
        labels = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
        # predictions: 1 1 0 1 0 -> tp=2 fp=1 fn=1 tn=1
        m = classification_metrics(scores, labels)
        assert m["accuracy"] == pytest.approx(3 / 5)
        assert m["precision"] == pytest.approx(2 / 3)
        assert m["recall"] == pytest.approx(2 / 3)
        assert m["f1"] == pytest.approx(2 / 3)

    def test_zero_division_conventions(self):
        # no predicted positives and no true positives
        m = classification_metrics(np.array([0.1, 0.2]), np.array([0.0, 0.0]))
        assert m["precision"] == m["recall"] == m["f1"] == 0.0
        assert m["auc"] is AUC_UNDEFINED

    def test_custom_threshold(self):
        scores = np.array([0.35, 0.45])
        labels = np.array([1.0, 0.0])
        assert classification_metrics(scores, labels)["recall"] == 0.0
        assert classification_metrics(scores, labels,
                                      threshold=0.3)["recall"] == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            classification_metrics(np.array([]), np.array([]))


class TestRegressionMetrics:
    def test_perfect_fit(self):
        t = np.array([1.0, 2.0, 3.0])
        m = regression_metrics(t, t)
        assert m["r2"] == 1.0
        assert m["mse"] == m["mae"] == 0.0

    def test_hand_checked_r2(self):
        targets = np.array([1.0, 2.0, 3.0, 4.0])
        preds = np.array([1.5, 2.0, 2.5, 4.0])
        ss_res = 0.25 + 0.0 + 0.25 + 0.0
        ss_tot = float(np.sum((targets - targets.mean()) ** 2))
        m = regression_metrics(preds, targets)
        assert m["r2"] == pytest.approx(1 - ss_res / ss_tot, abs=1e-12)
        assert m["mse"] == pytest.approx(ss_res / 4, abs=1e-12)
        assert m["mae"] == pytest.approx(0.25, abs=1e-12)

    def test_mean_predictor_scores_zero(self):
        rng = np.random.default_rng(2)
        targets = rng.normal(size=100)
        preds = np.full(100, targets.mean())
        assert regression_metrics(preds, targets)["r2"] == \
            pytest.approx(0.0, abs=1e-12)

    def test_raw_space_metrics_via_inverse_transform(self):
        transform = BoxCoxTransform(0.3)
        rng = np.random.default_rng(3)
        raw_true = rng.uniform(0.01, 0.5, 50)
        targets = boxcox_apply(raw_true, transform)
        preds = targets + 0.01 * rng.standard_normal(50)
        m = regression_metrics(preds, targets, transform=transform)
        assert {"raw_mse", "raw_mae", "raw_r2"} <= set(m)
        # exact predictions give exact raw metrics
        exact = regression_metrics(targets, targets, transform=transform)
        assert exact["raw_mse"] == 0.0
        assert exact["raw_r2"] == 1.0

    def test_constant_targets_rejected(self):
        with pytest.raises(ZeroVarianceError):
            regression_metrics(np.array([1.0, 2.0]), np.array([3.0, 3.0]))
