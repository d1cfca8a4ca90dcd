"""Greedy attribute promotion and the baseline graph constructions."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AugraphError, ValidationError
from .gnn import TrainConfig, train
from .graph import (DEFAULT_BINS, AttributeRef, BinPolicy, EdgeSet, HeteroGraph, _GraphReads, build_reg,
                    candidate_pool, promote, promote_all)
from .relational import CAT, FLOAT, INT, TRAIN_RELATION, Database
from .scoring import ENTROPY, GNN, MI, PATH, ScoreReport, Scorer, score_all
from .seeds import rng as sub_rng

DEFAULT_TAU = {MI: -math.inf, ENTROPY: 0.0, PATH: 0.5, GNN: 0.0}

BUDGET, THRESHOLD, EXHAUSTED = "budget", "threshold", "pool-exhausted"


@dataclass
class LoopConfig:
    k: int
    scorer: Scorer
    tau: float | None = None
    candidates: list | None = None
    seed: int = 0
    gnn: TrainConfig = field(default_factory=TrainConfig)
    retrain_each_round: bool = True
    workers: int = 1

    @property
    def threshold(self) -> float:
        return DEFAULT_TAU[self.scorer.kind] if self.tau is None else self.tau


@dataclass
class RoundRecord:
    round: int
    attribute: AttributeRef
    score: float
    reports: list

    def to_json(self, db: Database | None = None) -> dict:
        ranked = sorted(self.reports, key=lambda r: (-r.score, r.attribute))
        runner_up = ranked[1] if len(ranked) > 1 else None
        out = {
            "round": self.round,
            "attribute": str(self.attribute),
            "score": self.score,
            "runner_up": None if runner_up is None else str(runner_up.attribute),
            "runner_up_score": None if runner_up is None else runner_up.score,
            "scores": {str(r.attribute): r.score for r in self.reports},
        }
        if db is not None:
            out["name"] = self.attribute.name(db)
        return out


@dataclass
class PromotionTrace:
    rounds: list = field(default_factory=list)
    stop_reason: str | None = None
    final_reports: list = field(default_factory=list)

    @property
    def promoted(self) -> list[AttributeRef]:
        return [r.attribute for r in self.rounds]

    def to_json(self, db: Database | None = None) -> dict:
        return {
            "rounds": [r.to_json(db) for r in self.rounds],
            "stop_reason": self.stop_reason,
            "final_scores": {str(r.attribute): r.score for r in self.final_reports},
        }


class AugmentationError(AugraphError):
    def __init__(self, cause: Exception, trace: PromotionTrace):
        super().__init__(f"augmentation aborted after {len(trace.rounds)} rounds: {cause}", "augmentation",
                         rounds=len(trace.rounds))
        self.cause = cause
        self.trace = trace
        self.exit_code = getattr(cause, "exit_code", 3)


def _argmax(reports: Sequence[ScoreReport]) -> ScoreReport:
    # ties go to the lexicographically smallest (relation, position)
    return min(reports, key=lambda r: (-r.score, r.attribute))


def run_augmentation(g0: _GraphReads, db: Database, cfg: LoopConfig, bins: BinPolicy = DEFAULT_BINS):
    """Greedily promote the best-scoring attribute until budget, threshold or pool runs out.

    Scores are recomputed on the current graph every round. For GNN gain a
    fresh model is trained on each round's graph and frozen while that round
    is scored (``retrain_each_round``); otherwise one model trained on ``g0``
    is reused throughout.
    """
    pool = sorted(cfg.candidates if cfg.candidates is not None else candidate_pool(db, bins))
    if len(set(pool)) != len(pool):
        raise ValidationError("duplicate attributes in candidate pool", "bad_pool")
    if cfg.k < 0 or cfg.k > len(pool):
        raise ValidationError(f"budget k={cfg.k} must lie in [0, {len(pool)}]", "bad_budget", k=cfg.k)
    tau = cfg.threshold
    trace = PromotionTrace()
    g = g0
    model = None
    if cfg.scorer.kind == GNN and not cfg.retrain_each_round and cfg.k > 0:
        model = train(g0, db, cfg.gnn)
    try:
        while True:
            if len(trace.rounds) == cfg.k:
                trace.stop_reason = BUDGET
                break
            if not pool:
                trace.stop_reason = EXHAUSTED
                break
            round_model = None
            if cfg.scorer.kind == GNN:
                if cfg.retrain_each_round:
                    round_model = train(g, db, cfg.gnn)
                else:
                    round_model = dataclasses.replace(model, fingerprint=g.fingerprint(), _eval_cache={})
            reports = score_all(g, db, pool, cfg.scorer, round_model, cfg.workers)
            best = _argmax(reports)
            if not best.score > tau:
                trace.stop_reason = THRESHOLD
                trace.final_reports = reports
                break
            g, _ = promote(g, db, best.attribute, bins)
            pool.remove(best.attribute)
            trace.rounds.append(RoundRecord(len(trace.rounds) + 1, best.attribute, best.score, reports))
    except AugraphError as exc:
        raise AugmentationError(exc, trace) from exc
    return g, trace


def replay(g0: _GraphReads, db: Database, trace: PromotionTrace, bins: BinPolicy = DEFAULT_BINS):
    return promote_all(g0, db, trace.promoted, bins)


def build_all_promote(g0: _GraphReads, db: Database, candidates: Sequence[AttributeRef] | None = None,
                      bins: BinPolicy = DEFAULT_BINS):
    pool = sorted(candidates if candidates is not None else candidate_pool(db, bins))
    return promote_all(g0, db, pool, bins)


def build_random_k(g0: _GraphReads, db: Database, k: int, seed: int,
                   candidates: Sequence[AttributeRef] | None = None, bins: BinPolicy = DEFAULT_BINS):
    pool = sorted(candidates if candidates is not None else candidate_pool(db, bins))
    if not 0 <= k <= len(pool):
        raise ValidationError(f"random-k needs 0 <= k <= {len(pool)}", "bad_budget", k=k)
    picks = sub_rng(seed, "random-k").choice(len(pool), size=k, replace=False)
    return promote_all(g0, db, [pool[i] for i in picks], bins)


def tabular_features(db: Database, relation: str) -> np.ndarray:
    """One-hot categoricals and standardized numerics; missing values encode as zeros."""
    decl = db.relation(relation)
    rows = db.tables[relation]
    blocks = []
    for pos in range(2, decl.arity + 1):
        kind = decl.attr_type(pos).kind
        col = [r[pos - 1] for r in rows]
        if kind == CAT:
            levels = sorted({v for v in col if v is not None})
            idx = {v: i for i, v in enumerate(levels)}
            block = np.zeros((len(rows), len(levels)))
            for i, v in enumerate(col):
                if v is not None:
                    block[i, idx[v]] = 1.0
            blocks.append(block)
        elif kind in (INT, FLOAT):
            x = np.array([np.nan if v is None else float(v) for v in col])
            ok = ~np.isnan(x)
            z = np.zeros(len(rows))
            if ok.any():
                sd = x[ok].std()
                z[ok] = (x[ok] - x[ok].mean()) / (sd if sd > 0 else 1.0)
            blocks.append(z[:, None])
    return np.hstack(blocks) if blocks else np.zeros((len(rows), 0))


def knn_neighbors(x: np.ndarray, k: int, chunk: int = 256) -> np.ndarray:
    """Indices of the k nearest other rows (euclidean); ties go to the lower row index."""
    n = len(x)
    out = np.empty((n, k), dtype=np.int64)
    order = np.arange(n)
    for start in range(0, n, chunk):
        block = x[start:start + chunk]
        dist = ((block[:, None, :] - x[None, :, :]) ** 2).sum(axis=2)
        for i in range(len(block)):
            row = dist[i]
            row[start + i] = np.inf
            out[start + i] = np.lexsort((order, row))[:k]
    return out


def build_knn_graph(db: Database, k_nn: int = 10, metric: str = "euclidean") -> HeteroGraph:
    """Instance-similarity graph on a single table: each row linked to its k_nn nearest rows, symmetrized."""
    if metric != "euclidean":
        raise ValidationError(f"unsupported metric {metric!r}", "bad_metric")
    tables = [r.name for r in db.schema.relations if r.name != TRAIN_RELATION]
    if len(tables) != 1:
        raise ValidationError("knn requires single-table data", "knn_single_table")
    rel = tables[0]
    n = len(db.tables[rel])
    if not 1 <= k_nn < n:
        raise ValidationError(f"k_nn must lie in [1, {n - 1}]", "bad_knn_k", k_nn=k_nn)
    nbrs = knn_neighbors(tabular_features(db, rel), k_nn)
    pairs = {(min(i, int(j)), max(i, int(j))) for i in range(n) for j in nbrs[i]}
    und = np.asarray(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    src = np.concatenate([und[:, 0], und[:, 1]])
    dst = np.concatenate([und[:, 1], und[:, 0]])
    order = np.lexsort((dst, src))
    base = build_reg(db)
    edges = dict(base.edge_sets)
    name = f"knn:{rel}"
    edges[name] = EdgeSet(name, "knn", rel, rel, src[order], dst[order])
    return HeteroGraph(base.vertex_types, edges)
