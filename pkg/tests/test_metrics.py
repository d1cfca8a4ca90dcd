import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from augraph import metrics
from augraph.gnn import EvalResult


def brute_auc(y, s):
    pos = [v for v, t in zip(s, y) if t == 1]
    neg = [v for v, t in zip(s, y) if t == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


@pytest.mark.parametrize("y,expected", [([1, 1, 0, 0], 1.0), ([1, 0, 1, 0], 0.75), ([0, 0, 1, 1], 0.0)])
def test_auc_examples(y, expected):
    assert metrics.roc_auc(y, [0.9, 0.8, 0.3, 0.2]) == pytest.approx(expected)


def test_auc_alternating_half():
    assert metrics.roc_auc([1, 0, 0, 1], [0.9, 0.8, 0.3, 0.2]) == pytest.approx(0.5)


def test_auc_ties_count_half():
    assert metrics.roc_auc([1, 0, 1, 0], [0.5] * 4) == 0.5


def test_auc_single_class_nan():
    assert math.isnan(metrics.roc_auc([1, 1], [0.1, 0.2]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 5)), min_size=2, max_size=40))
def test_auc_matches_pair_count(pairs):
    y = [a for a, _ in pairs]
    s = [b / 5 for _, b in pairs]
    if len(set(y)) < 2:
        return
    assert metrics.roc_auc(y, s) == pytest.approx(brute_auc(y, s), abs=1e-12)


def test_perfect_predictor():
    y = np.array([0, 1, 1, 0, 1])
    assert metrics.accuracy(y, y) == 1.0
    assert metrics.f1_score(y, y) == 1.0
    assert metrics.roc_auc(y, y.astype(float)) == 1.0


def test_f1_binary_positive_class():
    # tp=1 fp=1 fn=1
    assert metrics.f1_score([1, 0, 1, 0], [1, 1, 0, 0]) == pytest.approx(0.5)
    assert metrics.f1_score([0, 0], [0, 0]) == 0.0


def test_f1_macro():
    y = [0, 1, 2, 2]
    p = [0, 1, 2, 1]
    # class 0: 1, class 1: 2/3, class 2: 2/3
    assert metrics.f1_score(y, p, 3) == pytest.approx((1 + 2 / 3 + 2 / 3) / 3)


def test_eval_result_metric_lookup():
    r = EvalResult(0.5, 0.4, None, 4, [0.1, 0.2, 0.3, 0.4])
    assert r.metric("accuracy") == 0.5 and r.metric("f1") == 0.4
    with pytest.raises(Exception):
        r.metric("roc_auc")
    assert "scores" not in r.to_json()
