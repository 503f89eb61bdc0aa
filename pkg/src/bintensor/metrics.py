"""Evaluation metrics: RMSE, misclassification rate, relative loss, AUC."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

__all__ = ["DegenerateLabels", "auc", "mer", "relative_loss", "rmse"]


class DegenerateLabels(ValueError):
    """AUC needs at least one positive and one negative label."""


def _paired(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def rmse(est_prob, true_prob) -> float:
    """Root mean square error ||est - true||_F / sqrt(N)."""
    est, true = _paired(est_prob, true_prob)
    return float(np.sqrt(np.mean((est - true) ** 2)))


def mer(est_prob, true_prob) -> float:
    """Misclassification rate of the 0.5-thresholded probability maps."""
    est, true = _paired(est_prob, true_prob)
    return float(np.mean((est >= 0.5) != (true >= 0.5)))


def relative_loss(theta_hat, theta_true) -> float:
    """||theta_hat - theta_true||_F / ||theta_true||_F."""
    est, true = _paired(theta_hat, theta_true)
    denom = np.linalg.norm(true.ravel())
    if denom == 0.0:
        raise ValueError("reference tensor has zero norm")
    return float(np.linalg.norm((est - true).ravel()) / denom)


def auc(scores, labels) -> float:
    """Area under the ROC curve (Mann-Whitney with midrank tie credit)."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("need both classes present to compute AUC")
    ranks = rankdata(scores, method="average")
    rank_sum = ranks[labels].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
