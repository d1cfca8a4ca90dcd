"""Command-line entry point.

Every command reads a dataset directory (``schema.txt``, one ``<relation>.csv``
per relation, ``task.csv``) and writes JSON into ``--out``. Each output JSON
carries the sha256 of the run manifest; re-running the same manifest
reproduces every output byte for byte. Wall-clock times live only in
``run_info.json``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .augment import LoopConfig, build_all_promote, build_knn_graph, build_random_k, run_augmentation
from .errors import AugraphError, NumericError, ValidationError
from .experiment import STRATEGIES, ExperimentConfig, comparison_table, curve_csv, run_experiment
from .gnn import GnnModel, TrainConfig, evaluate, gradient_check, train
from .graph import build_reg, candidate_pool
from .relational import attach_task, extract_label_column, load_database, load_task, parse_schema
from .scoring import EVAL_METRICS, GNN, KINDS, Scorer, score_all
from .seeds import derive_seed
from .synth import TINY_TRAIN, SynthConfig, generate, tiny_instance

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger("augraph")

# arguments that locate files rather than define the run
_NOT_IN_MANIFEST = {"out", "config", "command", "handler", "data", "model"}


# ---------------------------------------------------------------------------
# helpers


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _list(value, conv=str) -> list:
    if value is None:
        return []
    if isinstance(value, str):
        return [conv(v.strip()) for v in value.split(",") if v.strip()]
    if isinstance(value, (list, tuple)):
        return [conv(v) for v in value]
    return [conv(value)]


class Run:
    """Collects input hashes and writes outputs stamped with the manifest hash."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out)
        self.inputs: dict[str, str] = {}
        self.started = time.time()
        self._manifest_hash: str | None = None

    def add_input(self, path: Path) -> None:
        self.inputs[str(path)] = _sha256(path)

    def manifest(self) -> dict:
        arguments = {k: v for k, v in sorted(vars(self.args).items()) if k not in _NOT_IN_MANIFEST}
        return {"format": "augraph-manifest", "version": __version__, "command": self.args.command,
                "arguments": arguments, "inputs": dict(sorted(self.inputs.items()))}

    @property
    def manifest_hash(self) -> str:
        if self._manifest_hash is None:
            self._manifest_hash = hashlib.sha256(_dump(self.manifest()).encode()).hexdigest()
        return self._manifest_hash

    def write_json(self, name: str, obj: dict) -> Path:
        return self.write_text(name, _dump({**obj, "manifest_sha256": self.manifest_hash}))

    def write_text(self, name: str, text: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(text)
        return path

    def finish(self) -> None:
        self.write_text("manifest.json", _dump({**self.manifest(), "sha256": self.manifest_hash}))
        finished = time.time()
        self.write_text("run_info.json", _dump({
            "manifest_sha256": self.manifest_hash,
            "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(self.started)),
            "finished": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(finished)),
            "wall_clock_seconds": round(finished - self.started, 3),
        }))


def load_dataset(run: Run, args: argparse.Namespace):
    """Database with the task attached, from a dataset directory."""
    root = Path(args.data)
    if not root.is_dir():
        raise ValidationError(f"dataset directory {root} not found", "missing_input", path=str(root))
    schema_path = root / "schema.txt"
    if not schema_path.exists():
        raise ValidationError(f"{schema_path} not found", "missing_input", path=str(schema_path))
    run.add_input(schema_path)
    schema = parse_schema(schema_path.read_text())
    sources = {}
    for rel in schema.relations:
        path = root / f"{rel.name}.csv"
        if not path.exists():
            raise ValidationError(f"table file {path} not found", "missing_input", path=str(path))
        run.add_input(path)
        sources[rel.name] = path.read_text()
    if args.label_column:
        rel, _, col = args.label_column.partition(".")
        schema, sources, task = extract_label_column(schema, sources, rel, col, derive_seed(args.seed, "split"))
    else:
        target = args.target
        truth = root / "ground_truth.json"
        if target is None and truth.exists():
            run.add_input(truth)
            target = json.loads(truth.read_text()).get("target")
        if target is None:
            raise ValidationError("no target relation: pass --target or --label-column", "missing_target")
        task_path = root / "task.csv"
        if not task_path.exists():
            raise ValidationError(f"{task_path} not found", "missing_input", path=str(task_path))
        run.add_input(task_path)
        task = load_task(task_path.read_text(), target)
    strict = args.strict_fk if args.strict_fk is not None else (root / "ground_truth.json").exists()
    db = load_database(schema, sources, strict_fk=strict)
    return attach_task(db, task)


def train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(lr=args.lr, epochs=args.epochs, weight_decay=args.weight_decay, momentum=args.momentum,
                       hidden=args.hidden, seed=args.gnn_seed, tie_weight=args.tie_weight)


def _scorer(args: argparse.Namespace) -> Scorer:
    return Scorer(args.scorer, d=args.d, metric=args.metric)


def build_graph(args: argparse.Namespace, db):
    """Graph for ``--strategy``; returns (graph, extra JSON about the construction)."""
    g0 = build_reg(db)
    strategy = args.strategy
    if strategy == "reg":
        return g0, {}
    if strategy == "knn":
        return build_knn_graph(db, args.knn_k), {"k_nn": args.knn_k}
    pool = candidate_pool(db)
    if strategy == "all-promote":
        return build_all_promote(g0, db, pool), {}
    if strategy == "random-k":
        g = build_random_k(g0, db, args.k, derive_seed(args.seed, "random-k", 0), pool)
        return g, {"promoted": [str(a) for a in g.promoted]}
    loop = LoopConfig(k=args.k, scorer=_scorer(args), tau=args.tau, candidates=pool, gnn=train_config(args))
    g, trace = run_augmentation(g0, db, loop)
    return g, {"trace": trace.to_json(db)}


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, run: Run) -> int:
    cfg = SynthConfig(n_target=args.n_target, n_parent=args.n_parent, n_noise_attrs=args.noise_attrs,
                      cardinality=args.cardinality, label_noise=args.label_noise, seed=args.seed,
                      tabular=args.tabular, redundant_third=args.redundant_third)
    ds = generate(cfg)
    ds.write(run.out)
    print(f"wrote synthetic dataset ({ds.target}, ground truth: {', '.join(ds.ground_truth)}) to {run.out}")
    return 0


def cmd_build(args, run: Run) -> int:
    db = load_dataset(run, args)
    g, extra = build_graph(args, db)
    run.write_text("graph.txt", g.export_text())
    run.write_json("graph.json", {"strategy": args.strategy, "graph": g.manifest(db),
                                  "fingerprint": g.fingerprint(), **extra})
    print(f"{args.strategy}: {g.num_vertices} vertices, {g.num_edges} edges")
    return 0


def _score_table(reports, db) -> str:
    rows = [("rank", "attribute", "score")]
    for i, r in enumerate(reports, start=1):
        rows.append((str(i), r.attribute.name(db), f"{r.score:.6f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    return "\n".join(f"{a.rjust(widths[0])}  {b.ljust(widths[1])}  {c.rjust(widths[2])}" for a, b, c in rows) + "\n"


def cmd_score(args, run: Run) -> int:
    db = load_dataset(run, args)
    scorer = _scorer(args)
    g = build_reg(db)
    pool = candidate_pool(db)
    model = None
    if scorer.kind == GNN:
        if args.model:
            run.add_input(Path(args.model))
            model = GnnModel.from_json(json.loads(Path(args.model).read_text()))
        elif args.train:
            model = train(g, db, train_config(args))
        else:
            raise ValidationError("model required for gnn-gain scoring: pass --model or --train", "model_required")
    if not pool:
        log.warning("candidate pool is empty; nothing to score")
        reports = []
    else:
        reports = sorted(score_all(g, db, pool, scorer, model, args.workers), key=lambda r: (-r.score, r.attribute))
    run.write_json("scores.json", {"scorer": scorer.params(), "scores": [r.to_json(db) for r in reports]})
    sys.stdout.write(_score_table(reports, db))
    return 0


def cmd_augment(args, run: Run) -> int:
    db = load_dataset(run, args)
    loop = LoopConfig(k=args.k, scorer=_scorer(args), tau=args.tau, gnn=train_config(args), workers=args.workers,
                      retrain_each_round=not args.single_model)
    g, trace = run_augmentation(build_reg(db), db, loop)
    run.write_text("graph.txt", g.export_text())
    run.write_json("trace.json", {"scorer": loop.scorer.params(), "k": args.k, "tau": loop.threshold
                                  if loop.threshold != float("-inf") else None, **trace.to_json(db),
                                  "graph": g.manifest(db), "fingerprint": g.fingerprint()})
    names = [a.name(db) for a in trace.promoted]
    print(f"promoted {len(names)}: {', '.join(names) or '(none)'}; stop reason: {trace.stop_reason}")
    return 0


def _eval_json(model, g, db, splits) -> dict:
    out = {}
    for split in splits:
        if len(db.split_rows(split)):
            out[split] = evaluate(model, g, db, split).to_json()
    return out


def cmd_train(args, run: Run) -> int:
    db = load_dataset(run, args)
    g, extra = build_graph(args, db)
    model = train(g, db, train_config(args))
    blob = model.to_json()
    blob["losses"] = model.losses
    run.write_json("model.json", blob)
    run.write_json("train.json", {"strategy": args.strategy, "fingerprint": g.fingerprint(),
                                  "metrics": _eval_json(model, g, db, ("train", "val", "test")), **extra})
    print(f"trained on {args.strategy} graph; final loss {model.losses[-1] if model.losses else float('nan'):.6f}")
    return 0


def cmd_eval(args, run: Run) -> int:
    db = load_dataset(run, args)
    path = Path(args.model)
    run.add_input(path)
    model = GnnModel.from_json(json.loads(path.read_text()))
    g, _ = build_graph(args, db)
    splits = _list(args.splits)
    result = {"strategy": args.strategy, "fingerprint": g.fingerprint(),
              "same_graph_as_training": g.fingerprint() == model.fingerprint,
              "metrics": {s: evaluate(model, g, db, s).to_json() for s in splits}}
    run.write_json("eval.json", result)
    for s in splits:
        m = result["metrics"][s]
        auc = "-" if m["roc_auc"] is None else f"{m['roc_auc']:.3f}"
        print(f"{s}: accuracy {m['accuracy']:.3f}  f1 {m['f1']:.3f}  roc_auc {auc}")
    return 0


def cmd_experiment(args, run: Run) -> int:
    db = load_dataset(run, args)
    cfg = ExperimentConfig(
        strategies=tuple(_list(args.strategies)), k=args.k, tau=args.tau, scorers=tuple(_list(args.scorers)),
        d=args.d, gain_metric=args.metric, select_metric=args.select_metric,
        random_seeds=tuple(_list(args.seeds, int)), knn_k=args.knn_k, curve_ks=tuple(_list(args.curve_ks, int)),
        gnn=train_config(args),
    )
    result = run_experiment(db, cfg, root_seed=args.seed)
    table = comparison_table(result)
    run.write_json("experiment.json", result)
    run.write_text("table.txt", table)
    run.write_text("curve.csv", curve_csv(result))
    sys.stdout.write(table)
    failed = [s for s, r in result["strategies"].items() if r.get("status") != "ok"]
    for s in failed:
        log.warning("strategy %s failed: %s", s, result["strategies"][s]["error"]["message"])
    return 0


def cmd_gradcheck(args, run: Run) -> int:
    cfg = TrainConfig(hidden=args.hidden, epochs=0, seed=args.gnn_seed, activation=args.activation,
                      tie_weight=args.tie_weight, weight_decay=args.weight_decay)
    if args.data:
        db = load_dataset(run, args)
        g = build_reg(db)
    else:
        g, db = tiny_instance(args.seed)
    params = None
    if args.zero_params:
        from .gnn import init_model

        params = {k: 0.0 * v for k, v in init_model(g, db, cfg)[0].params.items()}
    err = gradient_check(cfg, g, db, step=args.step, params=params)
    err = float(err)
    ok = bool(err <= args.tol)
    run.write_json("gradcheck.json", {"max_relative_error": err, "tolerance": args.tol, "passed": ok,
                                      "vertices": g.num_vertices, "step": args.step, "config": cfg.to_json()})
    print(f"max relative error {err:.3e} (tolerance {args.tol:g}): {'ok' if ok else 'FAILED'}")
    if not ok:
        raise NumericError(f"gradient check failed: {err:.3e} > {args.tol:g}", "gradcheck_failed", error=err)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_data(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("data", nargs=None if required else "?", help="dataset directory")
    p.add_argument("--target", help="target relation (default: from ground_truth.json)")
    p.add_argument("--label-column", help="take labels from REL.COLUMN instead of task.csv (seeded split)")
    p.add_argument("--strict-fk", action=argparse.BooleanOptionalAction, default=None,
                   help="reject dangling foreign keys (default: on for synthetic datasets, off otherwise)")


def _add_gnn(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--momentum", type=float, default=d.momentum)
    p.add_argument("--hidden", type=int, default=d.hidden)
    p.add_argument("--gnn-seed", type=int, default=d.seed)
    p.add_argument("--tie-weight", type=float, default=d.tie_weight)


def _add_scoring(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--scorer", choices=KINDS, required=required, default=None if required else "mi")
    p.add_argument("--d", type=int, default=2, help="hop count for entropy gain")
    p.add_argument("--metric", choices=EVAL_METRICS, default="accuracy", help="validation metric for gnn gain")
    p.add_argument("--workers", type=int, default=1)


def _add_strategy(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strategy", choices=STRATEGIES, default="reg")
    p.add_argument("--k", type=int, default=3, help="promotion budget")
    p.add_argument("--tau", type=float, default=None, help="promotion threshold (default: per scorer)")
    p.add_argument("--knn-k", type=int, default=10)
    _add_scoring(p, required=False)


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="augraph", description="Task-aware graph construction from relational data")
    parser.add_argument("--version", action="version", version=f"augraph {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed")
    common.add_argument("--out", default="augraph-out", help="output directory")
    common.add_argument("--config", help="TOML file with option defaults")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["synth"] = sub.add_parser("synth", parents=[common], help="write a synthetic benchmark")
    s = SynthConfig()
    p.add_argument("--n-target", type=int, default=s.n_target)
    p.add_argument("--n-parent", type=int, default=s.n_parent)
    p.add_argument("--noise-attrs", type=int, default=s.n_noise_attrs)
    p.add_argument("--cardinality", type=int, default=s.cardinality)
    p.add_argument("--label-noise", type=float, default=s.label_noise)
    p.add_argument("--tabular", action="store_true", help="single-table variant")
    p.add_argument("--redundant-third", action="store_true", help="third signal duplicates the first")
    p.set_defaults(handler=cmd_synth)

    p = subs["build"] = sub.add_parser("build", parents=[common], help="build and export a graph")
    _add_data(p)
    _add_strategy(p)
    _add_gnn(p)
    p.set_defaults(handler=cmd_build)

    p = subs["score"] = sub.add_parser("score", parents=[common], help="score every candidate attribute")
    _add_data(p)
    _add_scoring(p, required=True)
    p.add_argument("--model", help="model checkpoint for gnn gain (trained on the REG)")
    p.add_argument("--train", action="store_true", help="train a REG model for gnn gain")
    _add_gnn(p)
    p.set_defaults(handler=cmd_score)

    p = subs["augment"] = sub.add_parser("augment", parents=[common], help="run the greedy promotion loop")
    _add_data(p)
    _add_scoring(p, required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--single-model", action="store_true", help="gnn gain: train once on the REG and reuse it")
    _add_gnn(p)
    p.set_defaults(handler=cmd_augment)

    p = subs["train"] = sub.add_parser("train", parents=[common], help="train the GNN on a constructed graph")
    _add_data(p)
    _add_strategy(p)
    _add_gnn(p)
    p.set_defaults(handler=cmd_train)

    p = subs["eval"] = sub.add_parser("eval", parents=[common], help="evaluate a trained model")
    _add_data(p)
    _add_strategy(p)
    _add_gnn(p)
    p.add_argument("--model", required=True)
    p.add_argument("--splits", default="val,test")
    p.set_defaults(handler=cmd_eval)

    p = subs["experiment"] = sub.add_parser("experiment", parents=[common], help="compare construction strategies")
    _add_data(p)
    p.add_argument("--strategies", default="reg,all-promote,random-k,augraph")
    p.add_argument("--scorers", default=",".join(KINDS))
    p.add_argument("--seeds", default="0,1,2", help="random-k seeds")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--metric", choices=EVAL_METRICS, default="accuracy", help="validation metric for gnn gain")
    p.add_argument("--select-metric", choices=EVAL_METRICS, default="accuracy")
    p.add_argument("--knn-k", type=int, default=10)
    p.add_argument("--curve-ks", default="0,1,2,3,4,5", help="budgets for the per-k curve")
    _add_gnn(p)
    p.set_defaults(handler=cmd_experiment)

    p = subs["gradcheck"] = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    _add_data(p, required=False)
    p.add_argument("--hidden", type=int, default=TINY_TRAIN["hidden"])
    p.add_argument("--gnn-seed", type=int, default=TrainConfig().seed)
    p.add_argument("--activation", choices=("relu", "identity"), default="relu")
    p.add_argument("--tie-weight", type=float, default=TrainConfig().tie_weight)
    p.add_argument("--weight-decay", type=float, default=TrainConfig().weight_decay)
    p.add_argument("--zero-params", action="store_true")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(handler=cmd_gradcheck)
    return parser, subs


def _config_defaults(path: str, command: str, sub: argparse.ArgumentParser) -> dict:
    """Option defaults from a TOML file: top-level keys plus a table named after the command."""
    try:
        data = tomllib.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file {path} not found", "missing_input", path=path) from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"config file {path}: {exc}", "bad_config") from None
    flat = {k: v for k, v in data.items() if not isinstance(v, dict)}
    flat.update(data.get(command, {}))
    known = {a.dest for a in sub._actions}
    out = {}
    for key, value in flat.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "help"):
            raise ValidationError(f"unknown option {key!r} in config file", "bad_config", key=key)
        out[dest] = ",".join(map(str, value)) if isinstance(value, list) else value
    return out


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="warning: %(message)s", stream=sys.stderr)
    parser, subs = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.config:
            subs[args.command].set_defaults(**_config_defaults(args.config, args.command, subs[args.command]))
            args = parser.parse_args(argv)
        run = Run(args)
        if args.config:
            run.add_input(Path(args.config))
        code = args.handler(args, run)
        run.finish()
        return code
    except AugraphError as exc:
        sys.stderr.write(json.dumps(exc.to_json(), sort_keys=True) + "\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "io", "message": str(exc), "details": {}}) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
