"""Classification metrics with fixed, reproducible definitions.

F1 is the positive-class F1 for binary tasks (class index 1 is positive)
and the unweighted macro average otherwise. ROC-AUC is the Mann-Whitney
statistic with mid-ranks for ties, defined for binary tasks only.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def accuracy(y_true, y_pred) -> float:
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    return float(np.mean(y_true == y_pred))


def _f1(y_true, y_pred, cls) -> float:
    tp = int(np.sum((y_pred == cls) & (y_true == cls)))
    fp = int(np.sum((y_pred == cls) & (y_true != cls)))
    fn = int(np.sum((y_pred != cls) & (y_true == cls)))
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def f1_score(y_true, y_pred, n_classes: int = 2) -> float:
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if n_classes == 2:
        return _f1(y_true, y_pred, 1)
    return float(np.mean([_f1(y_true, y_pred, c) for c in range(n_classes)]))


def roc_auc(y_true, scores) -> float:
    """Probability that a random positive outranks a random negative (ties count half)."""
    y_true = np.asarray(y_true)
    ranks = rankdata(np.asarray(scores, dtype=np.float64), method="average")
    pos = y_true == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
