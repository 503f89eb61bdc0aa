"""Evaluation metrics."""

import numpy as np
import pytest

from bintensor.metrics import DegenerateLabels, auc, mer, relative_loss, rmse


class TestPointwiseMetrics:
    def test_identical_tensors(self):
        t = np.random.default_rng(0).random((3, 4, 5))
        assert rmse(t, t) == 0.0
        assert mer(t, t) == 0.0
        assert relative_loss(t, t + 1e-300) == pytest.approx(0.0, abs=1e-200)

    def test_hand_computed_example(self):
        est = np.full((2, 2, 2), 0.4)
        true = np.full((2, 2, 2), 0.6)
        assert rmse(est, true) == pytest.approx(0.2, rel=1e-13)
        assert mer(est, true) == 1.0

    def test_rmse_matches_frobenius_form(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((4, 5)), rng.random((4, 5))
        assert rmse(a, b) == pytest.approx(np.linalg.norm(a - b) / np.sqrt(a.size), rel=1e-14)

    def test_relative_loss(self):
        true = np.ones((2, 2))
        assert relative_loss(1.5 * true, true) == pytest.approx(0.5, rel=1e-14)
        with pytest.raises(ValueError):
            relative_loss(true, np.zeros((2, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rmse(np.zeros((2, 2)), np.zeros((3, 2)))


class TestAuc:
    def test_perfect_separation(self):
        scores = np.array([0.1, 0.2, 0.8, 0.9])
        labels = np.array([0, 0, 1, 1])
        assert auc(scores, labels) == 1.0
        assert auc(-scores, labels) == 0.0

    def test_random_scores_near_half(self):
        rng = np.random.default_rng(2)
        scores = rng.random(20000)
        labels = rng.random(20000) < 0.5
        assert abs(auc(scores, labels) - 0.5) < 0.02

    def test_all_tied_scores(self):
        assert auc(np.ones(10), np.arange(10) % 2) == 0.5

    def test_midrank_tie_credit(self):
        # pairwise wins: 1 + 0.5 (tie) + 1 + 1 out of 4 pairs
        scores = np.array([0.0, 0.5, 0.5, 1.0])
        labels = np.array([0, 0, 1, 1])
        assert auc(scores, labels) == pytest.approx(3.5 / 4.0, rel=1e-15)

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(3)
        scores = rng.random(500)
        labels = rng.random(500) < 0.3
        base = auc(scores, labels)
        assert auc(np.exp(5 * scores), labels) == base
        assert auc(np.log(scores + 1e-9), labels) == base

    def test_degenerate_labels(self):
        with pytest.raises(DegenerateLabels):
            auc(np.array([0.1, 0.9]), np.array([1, 1]))
