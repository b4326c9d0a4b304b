"""Logistic link, per-instance loss and the two reported metrics."""

from __future__ import annotations

import numpy as np

from .errors import DataError

PROB_CLIP = 1e-15


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def instance_loss(phi, y):
    """``log(1 + exp(-y * phi))`` for labels in {-1, +1}, overflow-free."""
    z = -np.asarray(y, dtype=float) * np.asarray(phi, dtype=float)
    out = np.logaddexp(0.0, z)
    return out if out.ndim else float(out)


def _as01(labels) -> np.ndarray:
    y = np.asarray(labels)
    return (y > 0).astype(np.int64)


def log_loss_metric(probs, labels) -> float:
    p = np.asarray(probs, dtype=float)
    y = _as01(labels)
    if p.size == 0 or p.shape != y.shape:
        raise DataError("log loss needs equal-length, non-empty inputs")
    p = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def auc_metric(scores, labels) -> float:
    """Area under the ROC curve from average ranks (ties count one half).

    Labels may be 0/1 or -1/+1.
    """
    s = np.asarray(scores, dtype=float)
    y = _as01(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise DataError("scores and labels must be 1-d and of equal length")
    if np.isnan(s).any():
        raise DataError("scores contain NaN")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC is undefined when only one class is present")
    _, inv, counts = np.unique(s, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    avg_rank = (ends - counts + 1 + ends) / 2.0
    rank_sum = avg_rank[inv][y].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
