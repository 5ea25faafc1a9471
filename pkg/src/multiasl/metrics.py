"""Average precision, mAP over classes / samples, and actionness ROC-AUC."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def average_precision(scores, labels) -> float:
    """Mean of precision@r over the ranks r of the positive items.

    Items are ranked by descending score; ties keep their original order.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = labels.sum()
    if n_pos == 0:
        raise ValueError("average precision is undefined without positives")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision[hits].sum() / n_pos)


def per_class_ap(scores, labels) -> np.ndarray:
    """AP of each column; NaN where the column has no positive."""
    scores, labels = _table(scores, labels)
    out = np.full(scores.shape[1], np.nan)
    for c in range(scores.shape[1]):
        if labels[:, c].any():
            out[c] = average_precision(scores[:, c], labels[:, c])
    return out


def _table(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be matching [M, C] tables")
    return scores, labels


def map_c(scores, labels) -> float:
    """Macro mAP: AP per class over samples, averaged over classes with positives."""
    aps = per_class_ap(scores, labels)
    if np.isnan(aps).all():
        raise ValueError("no class has a positive sample")
    return float(np.nanmean(aps))


def map_s(scores, labels) -> float:
    """AP per sample over classes, averaged over samples with positives."""
    scores, labels = _table(scores, labels)
    return map_c(scores.T, labels.T)


def actionness_auc(p_a, mask) -> float:
    """ROC-AUC of frame actionness against a binary mask (Mann-Whitney U, ties averaged)."""
    p_a = np.asarray(p_a, dtype=float)
    mask = np.asarray(mask).astype(bool)
    n_pos, n_neg = mask.sum(), (~mask).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative frames")
    ranks = rankdata(p_a)
    u = ranks[mask].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))
