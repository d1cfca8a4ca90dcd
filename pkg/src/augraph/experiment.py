"""Run several graph construction strategies under one frozen GNN config and compare them."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .augment import LoopConfig, build_all_promote, build_knn_graph, build_random_k, run_augmentation
from .errors import AugraphError, ValidationError
from .gnn import TrainConfig, evaluate, train
from .graph import DEFAULT_BINS, BinPolicy, _GraphReads, build_reg, candidate_pool, promote_all
from .relational import Database
from .scoring import EVAL_METRICS, KINDS, Scorer
from .seeds import derive_seed

REG, ALL, RANDOM, KNN, AUGRAPH = "reg", "all-promote", "random-k", "knn", "augraph"
STRATEGIES = (REG, ALL, RANDOM, KNN, AUGRAPH)
TABLE_METRICS = ("f1", "accuracy", "roc_auc")


@dataclass(frozen=True)
class ExperimentConfig:
    strategies: tuple = (REG, ALL, RANDOM, AUGRAPH)
    k: int = 3
    tau: float | None = None  # None: each scorer's default threshold
    scorers: tuple = KINDS
    d: int = 2
    gain_metric: str = "accuracy"
    select_metric: str = "accuracy"
    random_seeds: tuple = (0, 1, 2)
    knn_k: int = 10
    curve_ks: tuple = ()
    retrain_each_round: bool = True
    gnn: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise ValidationError(f"unknown strategies {bad}; expected a subset of {list(STRATEGIES)}", "bad_strategy")
        bad = [s for s in self.scorers if s not in KINDS]
        if bad or not self.scorers:
            raise ValidationError(f"unknown scorers {bad}", "bad_scorer")
        if self.select_metric not in EVAL_METRICS or self.gain_metric not in EVAL_METRICS:
            raise ValidationError("unknown evaluation metric", "bad_metric")
        if self.k < 0 or any(k < 0 for k in self.curve_ks):
            raise ValidationError("budgets must be non-negative", "bad_budget")
        if RANDOM in self.strategies and not self.random_seeds:
            raise ValidationError("random-k needs at least one seed", "bad_config")

    def to_json(self) -> dict:
        out = asdict(self)
        out["gnn"] = self.gnn.to_json()
        for key in ("strategies", "scorers", "random_seeds", "curve_ks"):
            out[key] = list(out[key])
        out["tau"] = None if self.tau is None or math.isnan(self.tau) else self.tau
        return out


class _Runner:
    """Trains and evaluates graphs, memoized on the graph fingerprint.

    Identical graphs always give identical results, so the memo only saves
    time; it never changes a number.
    """

    def __init__(self, db: Database, cfg: TrainConfig):
        self.db = db
        self.cfg = cfg
        self.memo: dict[str, dict] = {}

    def run(self, g: _GraphReads) -> dict:
        fp = g.fingerprint()
        if fp not in self.memo:
            model = train(g, self.db, self.cfg)
            self.memo[fp] = {split: evaluate(model, g, self.db, split) for split in ("val", "test")}
        return self.memo[fp]


def _metrics(res: dict) -> dict:
    return {split: r.to_json() for split, r in res.items()}


def _mean_metrics(runs: list[dict]) -> dict:
    out = {}
    for split in ("val", "test"):
        out[split] = {}
        for m in ("accuracy", "f1", "roc_auc"):
            vals = [getattr(r[split], m) for r in runs]
            out[split][m] = None if any(v is None for v in vals) else float(np.mean(vals))
        out[split]["n"] = runs[0][split].n
    return out


def _failure(exc: Exception) -> dict:
    if isinstance(exc, AugraphError):
        return {"status": "failed", "error": exc.to_json()}
    return {"status": "failed", "error": {"code": "runtime", "message": str(exc)}}


def _augraph(g0, db, cfg: ExperimentConfig, runner: _Runner, pool, bins: BinPolicy):
    budget = max((cfg.k, *cfg.curve_ks))
    per_scorer, curve = {}, []
    for kind in cfg.scorers:
        scorer = Scorer(kind, d=cfg.d, metric=cfg.gain_metric, bins=bins)
        loop = LoopConfig(k=min(budget, len(pool)), scorer=scorer, tau=cfg.tau, candidates=pool, gnn=cfg.gnn,
                          retrain_each_round=cfg.retrain_each_round)
        _, trace = run_augmentation(g0, db, loop, bins)
        # greedy runs are prefix-consistent: the first j rounds of a budget-b
        # run are exactly the budget-j run
        promoted = trace.promoted
        for j in sorted(set(cfg.curve_ks)):
            res = runner.run(promote_all(g0, db, promoted[:j], bins))
            curve.append({"scorer": kind, "k": j, "promoted": len(promoted[:j]),
                          **{f"{split}_{m}": getattr(res[split], m) for split in ("val", "test") for m in TABLE_METRICS}})
        main = promoted[:cfg.k]
        stop = trace.stop_reason if len(promoted) <= cfg.k else "budget"
        res = runner.run(promote_all(g0, db, main, bins))
        rounds = [r.to_json(db) for r in trace.rounds[:cfg.k]]
        per_scorer[kind] = {"promoted": [str(a) for a in main], "names": [a.name(db) for a in main],
                            "stop_reason": stop, "rounds": rounds, "metrics": _metrics(res), "_res": res}
    chosen = max(cfg.scorers, key=lambda s: (per_scorer[s]["_res"]["val"].metric(cfg.select_metric),
                                             -cfg.scorers.index(s)))
    for entry in per_scorer.values():
        entry.pop("_res")
    return {"status": "ok", "chosen_scorer": chosen, "select_metric": cfg.select_metric,
            "metrics": per_scorer[chosen]["metrics"], "per_scorer": per_scorer}, curve


def run_experiment(db: Database, cfg: ExperimentConfig = ExperimentConfig(), root_seed: int = 0,
                   bins: BinPolicy = DEFAULT_BINS) -> dict:
    """Evaluate every requested strategy; a failing strategy is recorded and the rest still run."""
    g0 = build_reg(db)
    pool = candidate_pool(db, bins)
    runner = _Runner(db, cfg.gnn)
    results: dict = {}
    curve: list = []
    for strategy in cfg.strategies:
        try:
            if strategy == REG:
                results[REG] = {"status": "ok", "metrics": _metrics(runner.run(g0))}
            elif strategy == ALL:
                g = build_all_promote(g0, db, pool, bins)
                results[ALL] = {"status": "ok", "promoted": len(g.promoted), "metrics": _metrics(runner.run(g))}
            elif strategy == RANDOM:
                runs, picks = [], []
                for s in cfg.random_seeds:
                    g = build_random_k(g0, db, cfg.k, derive_seed(root_seed, "random-k", s), pool, bins)
                    runs.append(runner.run(g))
                    picks.append([str(a) for a in g.promoted])
                results[RANDOM] = {"status": "ok", "seeds": list(cfg.random_seeds), "promoted": picks,
                                   "metrics": _mean_metrics(runs), "runs": [_metrics(r) for r in runs]}
            elif strategy == KNN:
                results[KNN] = {"status": "ok", "k_nn": cfg.knn_k,
                                "metrics": _metrics(runner.run(build_knn_graph(db, cfg.knn_k)))}
            else:
                results[AUGRAPH], curve = _augraph(g0, db, cfg, runner, pool, bins)
        except (AugraphError, ArithmeticError) as exc:
            results[strategy] = _failure(exc)
    return {
        "format": "augraph-experiment",
        "version": 1,
        "root_seed": root_seed,
        "config": cfg.to_json(),
        "candidate_pool": [str(a) for a in pool],
        "strategies": results,
        "curve": curve,
    }


def comparison_table(result: dict, split: str = "test") -> str:
    """Plain-text table with one row per strategy and F1 / accuracy / ROC-AUC columns."""
    rows = [("strategy", "F1", "Accuracy", "ROC-AUC")]
    for name, entry in result["strategies"].items():
        label = name
        if entry.get("status") != "ok":
            rows.append((label, "failed", "", ""))
            continue
        if name == AUGRAPH:
            label = f"augraph ({entry['chosen_scorer']})"
        m = entry["metrics"][split]
        rows.append((label, *("-" if m.get(k) is None else f"{m[k]:.3f}" for k in TABLE_METRICS)))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in rows]
    return "\n".join(lines) + "\n"


def curve_csv(result: dict) -> str:
    cols = ["scorer", "k", "promoted"] + [f"{s}_{m}" for s in ("val", "test") for m in TABLE_METRICS]
    lines = [",".join(cols)]
    for row in result["curve"]:
        lines.append(",".join("" if row[c] is None else (f"{row[c]:.6f}" if isinstance(row[c], float) else str(row[c]))
                              for c in cols))
    return "\n".join(lines) + "\n"
