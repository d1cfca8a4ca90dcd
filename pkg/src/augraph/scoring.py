"""Attribute scoring functions. Every scorer returns "higher is better"."""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import ScoringError, ValidationError
from .gnn import GnnModel, evaluate
from .graph import DEFAULT_BINS, AttributeRef, BinPolicy, _GraphReads, attribute_values, check_eligible, promote_overlay
from .relational import Database, joined_value_counts

MI = "mi"
ENTROPY = "entropy-gain"
PATH = "path-disagreement"
GNN = "gnn-gain"
KINDS = (MI, ENTROPY, PATH, GNN)
EVAL_METRICS = ("accuracy", "f1", "roc_auc")


@dataclass(frozen=True)
class ScoreReport:
    attribute: AttributeRef
    kind: str
    score: float
    details: dict = field(default_factory=dict, compare=True)

    def to_json(self, db: Database | None = None) -> dict:
        out = {"attribute": str(self.attribute), "kind": self.kind, "score": self.score, "details": self.details}
        if db is not None:
            out["name"] = self.attribute.name(db)
        return out


def _train_labels(db: Database):
    rows = db.split_rows("train")
    if len(rows) == 0:
        raise ValidationError("no train vertices", "empty_train")
    return rows, db.label_vector()[rows]


def _values_per_target_row(db: Database, attr: AttributeRef, bins: BinPolicy):
    """Multiset of (binned) attribute values joined to each target row."""
    values, _ = attribute_values(db, attr, bins)
    return joined_value_counts(db, attr.relation, values)


# ---------------------------------------------------------------------------
# mutual information


def score_mi(db: Database, attr: AttributeRef, bins: BinPolicy = DEFAULT_BINS) -> ScoreReport:
    """Mutual information (nats) between the attribute and the label over the joined training table.

    Row multiplicities of the left join are kept; rows where the attribute
    is missing are left out.
    """
    check_eligible(db, attr)
    rows, y = _train_labels(db)
    per_row = _values_per_target_row(db, attr, bins)
    joint: Counter = Counter()
    for r, label in zip(rows, y):
        for a, c in per_row[r].items():
            joint[(a, int(label))] += c
    total = sum(joint.values())
    if total == 0:
        raise ValidationError(f"joined training table is empty for {attr}", "empty_join", attribute=str(attr))
    n_a: Counter = Counter()
    n_y: Counter = Counter()
    for (a, label), c in joint.items():
        n_a[a] += c
        n_y[label] += c
    score = 0.0
    for (a, label), c in sorted(joint.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
        score += c / total * math.log((c * total) / (n_a[a] * n_y[label]))
    details = {
        "rows": total,
        "joint_counts": {f"{a}|{label}": c for (a, label), c in sorted(joint.items(), key=lambda kv: (str(kv[0][0]), kv[0][1]))},
    }
    return ScoreReport(attr, MI, score, details)


# ---------------------------------------------------------------------------
# entropy gain


def _entropy_rows(counts: np.ndarray) -> np.ndarray:
    total = counts.sum(axis=1, keepdims=True)
    p = np.divide(counts, total, out=np.zeros_like(counts, dtype=np.float64), where=total > 0)
    logs = np.log(p, out=np.zeros_like(p), where=p > 0)
    return -(p * logs).sum(axis=1)


def neighborhood_entropies(g: _GraphReads, db: Database, d: int, include_center: bool = False) -> np.ndarray:
    """Label entropy of each train vertex's d-hop train neighborhood (undirected hops)."""
    if d < 1:
        raise ValidationError("hop count d must be >= 1", "bad_config")
    task = db.require_task()
    rows, y = _train_labels(db)
    idx = g.offsets()[task.target] + rows
    adj = g.undirected_adjacency(skip_kinds=("train",)).astype(np.float32)
    reach = np.zeros((g.num_vertices, len(rows)), dtype=np.float32)
    reach[idx, np.arange(len(rows))] = 1.0
    for _ in range(d):
        reach = np.minimum(reach + adj @ reach, 1.0)
    sub = reach[idx] > 0  # sub[u, v]: train vertex u lies within d hops of v
    if not include_center:
        np.fill_diagonal(sub, False)
    onehot = np.zeros((len(rows), len(task.classes)))
    onehot[np.arange(len(rows)), y] = 1.0
    return _entropy_rows(sub.T.astype(np.float64) @ onehot)


def score_entropy_gain(g: _GraphReads, db: Database, attr: AttributeRef, d: int = 2, include_center: bool = False,
                       bins: BinPolicy = DEFAULT_BINS, base: np.ndarray | None = None) -> ScoreReport:
    check_eligible(db, attr)
    if base is None:
        base = neighborhood_entropies(g, db, d, include_center)
    values, _ = attribute_values(db, attr, bins)
    if all(v is None for v in values):
        aug = base
    else:
        aug = neighborhood_entropies(promote_overlay(g, db, attr, bins), db, d, include_center)
    delta = base - aug
    score = float(np.mean(delta))
    details = {
        "d": d,
        "include_center": include_center,
        "mean_entropy_before": float(np.mean(base)),
        "mean_entropy_after": float(np.mean(aug)),
        "vertices_improved": int(np.sum(delta > 0)),
        "vertices_worsened": int(np.sum(delta < 0)),
    }
    return ScoreReport(attr, ENTROPY, score, details)


# ---------------------------------------------------------------------------
# path disagreement


def path_disagreement_counts(db: Database, attr: AttributeRef, bins: BinPolicy = DEFAULT_BINS) -> tuple[int, int]:
    """(connected train pairs, connected pairs with different labels).

    Two train rows are connected when the attribute values reachable from
    them through foreign keys share at least one value.
    """
    rows, y = _train_labels(db)
    per_row = _values_per_target_row(db, attr, bins)
    sets = [per_row[r].keys() for r in rows]
    if all(len(s) <= 1 for s in sets):
        groups: dict = {}
        for s, label in zip(sets, y):
            for a in s:
                groups.setdefault(a, Counter())[int(label)] += 1
        connected = disagree = 0
        for counts in groups.values():
            n = sum(counts.values())
            pairs = n * (n - 1) // 2
            connected += pairs
            disagree += pairs - sum(c * (c - 1) // 2 for c in counts.values())
        return connected, disagree
    members: dict = {}
    for i, s in enumerate(sets):
        for a in s:
            members.setdefault(a, []).append(i)
    pairs = set()
    for group in members.values():
        pairs.update(combinations(group, 2))
    return len(pairs), sum(1 for u, v in pairs if y[u] != y[v])


def score_path_disagreement(db: Database, attr: AttributeRef, bins: BinPolicy = DEFAULT_BINS) -> ScoreReport:
    check_eligible(db, attr)
    connected, disagree = path_disagreement_counts(db, attr, bins)
    if connected == 0:
        return ScoreReport(attr, PATH, 0.0, {"connected_pairs": 0, "disagreeing_pairs": 0, "rate": None,
                                              "no_signal": True})
    rate = disagree / connected
    details = {"connected_pairs": connected, "disagreeing_pairs": disagree, "rate": rate, "no_signal": False}
    return ScoreReport(attr, PATH, 1.0 - rate, details)


# ---------------------------------------------------------------------------
# GNN gain


def base_eval(model: GnnModel, g: _GraphReads, db: Database):
    key = (g.fingerprint(), id(db))
    if key not in model._eval_cache:
        model._eval_cache[key] = evaluate(model, g, db, "val")
    return model._eval_cache[key]


def score_gnn_gain(g: _GraphReads, db: Database, attr: AttributeRef, model: GnnModel, metric: str = "accuracy",
                   bins: BinPolicy = DEFAULT_BINS) -> ScoreReport:
    """Validation-metric change of a frozen model when the attribute is promoted."""
    check_eligible(db, attr)
    if model.fingerprint != g.fingerprint():
        raise ValidationError("model was trained on a different graph", "fingerprint_mismatch")
    if len(db.split_rows("val")) == 0:
        raise ValidationError("empty validation set", "empty_split")
    before = base_eval(model, g, db).metric(metric)
    values, _ = attribute_values(db, attr, bins)
    if all(v is None for v in values):
        after = before
    else:
        after = evaluate(model, promote_overlay(g, db, attr, bins), db, "val").metric(metric)
    return ScoreReport(attr, GNN, after - before, {"metric": metric, "before": before, "after": after})


# ---------------------------------------------------------------------------


@dataclass
class Scorer:
    kind: str
    d: int = 2
    metric: str = "accuracy"
    include_center: bool = False
    bins: BinPolicy = DEFAULT_BINS
    _base_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown scorer {self.kind!r}; expected one of {', '.join(KINDS)}", "bad_scorer")
        if self.d < 1:
            raise ValidationError("hop count d must be >= 1", "bad_config")
        if self.metric not in EVAL_METRICS:
            raise ValidationError(f"unknown evaluation metric {self.metric!r}", "bad_metric")

    def params(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == ENTROPY:
            out.update(d=self.d, include_center=self.include_center)
        if self.kind == GNN:
            out["metric"] = self.metric
        return out

    def base_entropies(self, g: _GraphReads, db: Database) -> np.ndarray:
        key = (g.fingerprint(), id(db))
        if key not in self._base_cache:
            self._base_cache.clear()
            self._base_cache[key] = neighborhood_entropies(g, db, self.d, self.include_center)
        return self._base_cache[key]

    def score(self, g: _GraphReads, db: Database, attr: AttributeRef, model: GnnModel | None = None) -> ScoreReport:
        if self.kind == MI:
            return score_mi(db, attr, self.bins)
        if self.kind == PATH:
            return score_path_disagreement(db, attr, self.bins)
        if self.kind == ENTROPY:
            return score_entropy_gain(g, db, attr, self.d, self.include_center, self.bins, self.base_entropies(g, db))
        if model is None:
            raise ValidationError("model required for gnn-gain scoring", "model_required")
        return score_gnn_gain(g, db, attr, model, self.metric, self.bins)


def score_all(g: _GraphReads, db: Database, candidates: Sequence[AttributeRef], scorer: Scorer,
              model: GnnModel | None = None, workers: int = 1) -> list[ScoreReport]:
    """One report per candidate, in input order."""
    if not candidates:
        raise ValidationError("no candidates to score", "empty_pool")

    def one(attr):
        try:
            return scorer.score(g, db, attr, model)
        except ScoringError:
            raise
        except Exception as exc:  # tag the failing attribute
            raise ScoringError(attr, exc) from exc

    # shared caches are filled before fanning out
    if scorer.kind == ENTROPY:
        scorer.base_entropies(g, db)
    if scorer.kind == GNN and model is not None and model.fingerprint == g.fingerprint():
        base_eval(model, g, db)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, candidates))
    return [one(a) for a in candidates]
