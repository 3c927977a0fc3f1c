"""
Rank metrics with bootstrap confidence intervals.
"""

__all__ = [
    'auroc',
    'auprc',
    'f1_score',
    'bootstrap_ci',
    'pr_curve',
    'METRICS',
]

import logging

import numpy as np
from sklearn.metrics import (
    roc_auc_score, average_precision_score, precision_recall_curve)

from nextvisit.core.errors import ConfigError, UndefinedMetricError


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1D of equal length")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise UndefinedMetricError(
            "Need both classes, got {} positives out of {}"
            .format(n_pos, len(labels)))
    return scores, labels


def auroc(scores, labels):
    """Area under the ROC curve, ties credited 0.5."""
    scores, labels = _check_binary(scores, labels)
    return float(roc_auc_score(labels, scores))


def auprc(scores, labels):
    """Average precision: mean precision at the rank of each positive."""
    scores, labels = _check_binary(scores, labels)
    return float(average_precision_score(labels, scores))


METRICS = {
    'auroc': auroc,
    'auprc': auprc,
}


def f1_score(tp, fp, fn):
    """F1 from counts, 0 if there are no true positives."""
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)


def bootstrap_ci(scores, labels, metric, n_resamples=1000, seed=0,
                 groups=None, alpha=0.05, max_retries=100):
    """
    Percentile bootstrap interval ``(lo, hi)`` of ``metric(scores, labels)``.

    Resampling is done over ``groups`` (e.g. patient ids) with replacement,
    taking all items of every drawn group. Resamples that contain only one
    class are redrawn, at most ``max_retries`` times per resample.
    """
    if n_resamples < 100:
        raise ConfigError("Need at least 100 bootstrap resamples")
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    _check_binary(scores, labels)
    if groups is None:
        groups = np.arange(len(scores))
    keys, inverse = np.unique(np.asarray(groups), return_inverse=True)
    members = [np.flatnonzero(inverse == g) for g in range(len(keys))]
    rng = np.random.default_rng(seed)
    values = []
    redrawn = 0
    for _ in range(n_resamples):
        for _ in range(max_retries + 1):
            drawn = rng.integers(0, len(keys), len(keys))
            idx = np.concatenate([members[g] for g in drawn])
            try:
                values.append(metric(scores[idx], labels[idx]))
                break
            except UndefinedMetricError:
                redrawn += 1
        else:
            raise UndefinedMetricError(
                "Bootstrap resample has a single class after {} retries"
                .format(max_retries))
    if redrawn:
        logging.info("Redrew {} single-class bootstrap resamples"
                     .format(redrawn))
    lo, hi = np.percentile(values, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return float(lo), float(hi)


def pr_curve(scores, labels):
    """
    Precision-recall points as rows ``(threshold, precision, recall,
    optimal)`` sorted by ascending threshold. ``optimal`` is 1 for the row
    with maximal F1 and 0 otherwise.
    """
    scores, labels = _check_binary(scores, labels)
    precision, recall, thresholds = precision_recall_curve(labels, scores)
    # the last point (recall 0, precision 1) has no threshold
    precision, recall = precision[:-1], recall[:-1]
    with np.errstate(invalid='ignore', divide='ignore'):
        f1 = np.where(precision + recall > 0,
                      2 * precision * recall / (precision + recall), 0.0)
    best = int(np.argmax(f1))
    return [
        (float(t), float(p), float(r), int(i == best))
        for i, (t, p, r) in enumerate(zip(thresholds, precision, recall))
    ]
