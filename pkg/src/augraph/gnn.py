"""A small heterogeneous mean-aggregation GNN written directly in numpy.

Per layer and vertex type ``t``::

    h_t' = act(h_t W_self[t] + b[t] + sum_r mean_{u in N_r(v)} h_u W_msg[r])

where ``r`` ranges over (edge type, direction) pairs arriving at ``t``; every
edge type is used in both directions with separate weights. Two layers feed
a linear softmax head on the target relation. Gradients are derived by hand
and checked against central differences by :func:`gradient_check`.

Vertex types or relations absent from the training graph are routed through
a shared fallback set of parameters. The fallback is pulled towards the
per-type parameters during training by a small quadratic tying penalty, so
a frozen model can be evaluated on a graph with newly promoted attributes.
"""

from __future__ import annotations

import hashlib
import json
import math
import weakref
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import metrics
from .errors import NumericError, ValidationError
from .graph import EdgeSet, _GraphReads
from .relational import CAT, FK, FLOAT, INT, KEY, Database

N_BUCKETS = 1 << 16
FALLBACK = "*"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    epochs: int = 200
    weight_decay: float = 1e-4
    momentum: float = 0.9
    hidden: int = 32
    layers: int = 2
    seed: int = 42
    tie_weight: float = 0.01
    activation: str = "relu"

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ValidationError("training hyperparameters out of range", "bad_config", config=asdict(self))
        if self.hidden < 1 or self.layers < 0 or self.activation not in ("relu", "identity"):
            raise ValidationError("bad architecture settings", "bad_config", config=asdict(self))

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class EvalResult:
    accuracy: float
    f1: float
    roc_auc: float | None
    n: int
    scores: list = field(default_factory=list, repr=False)

    def metric(self, name: str) -> float:
        value = {"accuracy": self.accuracy, "f1": self.f1, "roc_auc": self.roc_auc}[name]
        if value is None:
            raise ValidationError(f"metric {name} undefined for this task", "bad_metric")
        return value

    def to_json(self, with_scores: bool = False) -> dict:
        out = {"accuracy": self.accuracy, "f1": self.f1, "roc_auc": self.roc_auc, "n": self.n}
        if with_scores:
            out["scores"] = self.scores
        return out


# ---------------------------------------------------------------------------
# graph compilation


def _bucket(vtype: str, pos: int, value) -> int:
    digest = hashlib.blake2b(f"{vtype}\x1f{pos}\x1f{value!r}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") % N_BUCKETS


_type_cache: "weakref.WeakKeyDictionary[Database, dict]" = weakref.WeakKeyDictionary()
_adj_cache: "weakref.WeakKeyDictionary[EdgeSet, tuple]" = weakref.WeakKeyDictionary()


def _relation_features(db: Database, name: str):
    """Categorical buckets and standardized numeric channels of a relation's non-key columns."""
    cache = _type_cache.setdefault(db, {})
    if name in cache:
        return cache[name]
    decl = db.relation(name)
    rows = db.tables[name]
    cat_buckets, numeric = [], {}
    for pos in range(2, decl.arity + 1):
        kind = decl.attr_type(pos).kind
        col = [r[pos - 1] for r in rows]
        if kind == CAT:
            cat_buckets.append([_bucket(name, pos, "<NA>" if v is None else v) for v in col])
        elif kind in (INT, FLOAT):
            x = np.array([np.nan if v is None else float(v) for v in col])
            ok = ~np.isnan(x)
            z = np.zeros_like(x)
            if ok.any():
                sd = x[ok].std()
                z[ok] = (x[ok] - x[ok].mean()) / (sd if sd > 0 else 1.0)
            numeric[pos] = z
        elif kind not in (KEY, FK):
            raise ValidationError(f"unsupported attribute type {kind}", "bad_type")
    buckets = np.asarray(cat_buckets, dtype=np.int64).T if cat_buckets else np.zeros((len(rows), 0), np.int64)
    cache[name] = (buckets, numeric)
    return cache[name]


def _mean_adjacency(e: EdgeSet, n_src: int, n_dst: int):
    """Row-normalized (dst x src) matrices for the forward and reverse directions."""
    if e in _adj_cache:
        return _adj_cache[e]
    out = []
    for rows, cols, nr, nc in ((e.dst, e.src, n_dst, n_src), (e.src, e.dst, n_src, n_dst)):
        a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(nr, nc))
        deg = np.asarray(a.sum(axis=1)).ravel()
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        out.append(sp.csr_matrix(sp.diags(inv) @ a))
    _adj_cache[e] = tuple(out)
    return _adj_cache[e]


@dataclass
class _TypeInput:
    name: str
    n: int
    key_only: bool
    cat_rows: sp.csr_matrix | None  # (n x n_model_buckets) multi-hot
    numeric: dict
    degree: np.ndarray


@dataclass
class _Compiled:
    target: str
    types: dict  # name -> _TypeInput
    relations: list  # (rel_name, src_type, dst_type, matrix)


def _compile(g: _GraphReads, db: Database, bucket_ids: np.ndarray) -> _Compiled:
    task = db.require_task()
    types = {}
    degree = {n: np.zeros(len(t)) for n, t in g.vertex_types.items()}
    relations = []
    for e in g.edge_sets.values():
        if e.kind == "train":
            continue
        degree[e.src_type] += np.bincount(e.src, minlength=len(degree[e.src_type]))
        degree[e.dst_type] += np.bincount(e.dst, minlength=len(degree[e.dst_type]))
        fwd, rev = _mean_adjacency(e, g.count(e.src_type), g.count(e.dst_type))
        relations.append((f"{e.name}>", e.src_type, e.dst_type, fwd))
        relations.append((f"{e.name}<", e.dst_type, e.src_type, rev))
    for name, t in g.vertex_types.items():
        if t.kind == "train":
            continue
        cat_rows, numeric, key_only = None, {}, True
        if t.kind == "relation":
            buckets, numeric = _relation_features(db, name)
            key_only = buckets.shape[1] == 0 and not numeric
            if buckets.shape[1]:
                col = np.searchsorted(bucket_ids, buckets)
                col = np.minimum(col, max(len(bucket_ids) - 1, 0))
                known = (bucket_ids[col] == buckets) if len(bucket_ids) else np.zeros(buckets.shape, bool)
                r = np.repeat(np.arange(len(t)), buckets.shape[1]).reshape(buckets.shape)
                cat_rows = sp.csr_matrix(
                    (np.ones(int(known.sum())), (r[known], col[known])), shape=(len(t), len(bucket_ids))
                )
        types[name] = _TypeInput(name, len(t), key_only, cat_rows, numeric, np.log1p(degree[name]))
    if task.target not in types:
        raise ValidationError(f"target relation {task.target} missing from graph", "no_target")
    return _Compiled(task.target, types, relations)


def _graph_buckets(g: _GraphReads, db: Database) -> np.ndarray:
    found = set()
    for name, t in g.vertex_types.items():
        if t.kind == "relation":
            found.update(np.unique(_relation_features(db, name)[0]).tolist())
    return np.asarray(sorted(found), dtype=np.int64)


# ---------------------------------------------------------------------------
# parameters


def _layer_plan(c: _Compiled, layers: int):
    """Vertex types computed at each layer; the last layer only needs the target."""
    plan = []
    for layer in range(1, layers + 1):
        plan.append([c.target] if layer == layers else list(c.types))
    return plan


def _param_shapes(c: _Compiled, cfg: TrainConfig, n_buckets: int, n_classes: int) -> dict:
    w = cfg.hidden
    shapes = {"emb": (n_buckets, w), f"const:{FALLBACK}": (w,), f"deg:{FALLBACK}": (w,)}
    for t in c.types.values():
        shapes[f"const:{t.name}"] = (w,)
        if t.key_only:
            shapes[f"deg:{t.name}"] = (w,)
        for pos in t.numeric:
            shapes[f"num:{t.name}:{pos}"] = (w,)
    for layer, computed in enumerate(_layer_plan(c, cfg.layers), start=1):
        shapes[f"self:{layer}:{FALLBACK}"] = (w, w)
        shapes[f"bias:{layer}:{FALLBACK}"] = (w,)
        shapes[f"msg:{layer}:{FALLBACK}"] = (w, w)
        for t in computed:
            shapes[f"self:{layer}:{t}"] = (w, w)
            shapes[f"bias:{layer}:{t}"] = (w,)
        for rel, _, dst, _ in c.relations:
            if dst in computed:
                shapes[f"msg:{layer}:{rel}"] = (w, w)
    shapes["out:W"] = (w, n_classes)
    shapes["out:b"] = (n_classes,)
    return shapes


def _init_rng(seed: int, *names) -> np.random.Generator:
    digest = hashlib.blake2b("\x1f".join(map(str, (seed,) + names)).encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def _init_params(shapes: dict, bucket_ids: np.ndarray, cfg: TrainConfig) -> dict:
    w = cfg.hidden
    params = {}
    for name, shape in sorted(shapes.items()):
        family = name.split(":", 1)[0]
        if family == "emb":
            rows = [_init_rng(cfg.seed, "emb", int(b)).normal(0.0, 0.5, w) for b in bucket_ids]
            params[name] = np.asarray(rows, dtype=np.float64).reshape(shape)
        elif family in ("bias", "const") or name == "out:b":
            params[name] = np.zeros(shape)
        elif family in ("deg", "num"):
            params[name] = _init_rng(cfg.seed, name).normal(0.0, 0.5, shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            params[name] = _init_rng(cfg.seed, name).uniform(-bound, bound, shape)
    # fallbacks start at the centre of the parameters they stand in for
    tied = dict(_tie_groups(params))
    for name in params:
        if name.endswith(f":{FALLBACK}"):
            members = tied.get(name, [])
            params[name] = np.mean([params[m] for m in members], axis=0) if members else np.zeros(shapes[name])
    return params


def _fallback_name(name: str) -> str | None:
    kind = name.split(":", 1)[0]
    if kind in ("const", "deg"):
        return f"{kind}:{FALLBACK}"
    if kind in ("self", "bias", "msg"):
        return f"{kind}:{name.split(':')[1]}:{FALLBACK}"
    return None


def _tie_groups(params: dict):
    """(fallback name, member names) for every tied family."""
    groups: dict[str, list[str]] = {}
    for name in params:
        fb = _fallback_name(name)
        if fb is not None and fb != name:
            groups.setdefault(fb, []).append(name)
    return sorted((fb, sorted(members)) for fb, members in groups.items() if fb in params)


def _resolve(params: dict, name: str) -> str:
    return name if name in params else _fallback_name(name)


# ---------------------------------------------------------------------------
# forward / backward


def _act(x, kind):
    return np.maximum(x, 0.0) if kind == "relu" else x


def _encode(params, t: _TypeInput):
    x = np.broadcast_to(params[_resolve(params, f"const:{t.name}")], (t.n, params["out:W"].shape[0])).copy()
    if t.name not in _seen_types(params):
        return x + np.outer(t.degree, params[f"deg:{FALLBACK}"])
    if t.cat_rows is not None:
        x += t.cat_rows @ params["emb"]
    for pos, z in t.numeric.items():
        x += np.outer(z, params[f"num:{t.name}:{pos}"])
    if t.key_only:
        x += np.outer(t.degree, params[f"deg:{t.name}"])
    return x


def _seen_types(params) -> set:
    return {k.split(":", 1)[1] for k in params if k.startswith("const:")} - {FALLBACK}


def _forward(params, c: _Compiled, cfg: TrainConfig):
    cache = {"h": [], "msgs": [], "pre": []}
    h = {name: _encode(params, t) for name, t in c.types.items()}
    cache["h"].append(h)
    for layer, computed in enumerate(_layer_plan(c, cfg.layers), start=1):
        pre, msgs = {}, []
        for t in computed:
            pre[t] = h[t] @ params[_resolve(params, f"self:{layer}:{t}")] + params[_resolve(params, f"bias:{layer}:{t}")]
        for rel, src, dst, a in c.relations:
            if dst not in pre:
                continue
            m = a @ h[src]
            wname = _resolve(params, f"msg:{layer}:{rel}")
            pre[dst] += m @ params[wname]
            msgs.append((rel, src, dst, a, m, wname))
        h = {t: _act(p, cfg.activation) for t, p in pre.items()}
        cache["pre"].append(pre)
        cache["msgs"].append(msgs)
        cache["h"].append(h)
    logits = h[c.target] @ params["out:W"] + params["out:b"]
    return logits, cache


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _loss_and_grad(params, c: _Compiled, cfg: TrainConfig, rows: np.ndarray, y: np.ndarray, need_grad=True):
    logits, cache = _forward(params, c, cfg)
    p = _softmax(logits[rows])
    n = len(rows)
    ce = -np.mean(np.log(np.maximum(p[np.arange(n), y], 1e-300)))
    reg = 0.5 * cfg.weight_decay * sum(float(np.sum(v * v)) for v in params.values())
    tie = 0.0
    groups = _tie_groups(params)
    for fb, members in groups:
        for m in members:
            d = params[m] - params[fb]
            tie += cfg.tie_weight / len(members) * float(np.sum(d * d))
    loss = ce + reg + tie
    if not need_grad:
        return loss, None, logits
    grads = {k: cfg.weight_decay * v for k, v in params.items()}
    for fb, members in groups:
        for m in members:
            d = 2 * cfg.tie_weight / len(members) * (params[m] - params[fb])
            grads[m] += d
            grads[fb] -= d

    dlogit = np.zeros_like(logits)
    dz = p.copy()
    dz[np.arange(n), y] -= 1.0
    dlogit[rows] = dz / n
    h_last = cache["h"][-1][c.target]
    grads["out:W"] += h_last.T @ dlogit
    grads["out:b"] += dlogit.sum(axis=0)
    dh = {c.target: dlogit @ params["out:W"].T}
    for layer in range(cfg.layers, 0, -1):
        pre = cache["pre"][layer - 1]
        h_prev = cache["h"][layer - 1]
        dpre = {}
        for t, pv in pre.items():
            g = dh.get(t)
            if g is None:
                continue
            dpre[t] = g * (pv > 0) if cfg.activation == "relu" else g
        dh = {}
        for t, g in dpre.items():
            grads[_resolve(params, f"self:{layer}:{t}")] += h_prev[t].T @ g
            grads[_resolve(params, f"bias:{layer}:{t}")] += g.sum(axis=0)
            dh[t] = dh.get(t, 0) + g @ params[_resolve(params, f"self:{layer}:{t}")].T
        for rel, src, dst, a, m, wname in cache["msgs"][layer - 1]:
            g = dpre.get(dst)
            if g is None:
                continue
            grads[wname] += m.T @ g
            dh[src] = dh.get(src, 0) + a.T @ (g @ params[wname].T)
    seen = _seen_types(params)
    for name, g in dh.items():
        t = c.types[name]
        grads[_resolve(params, f"const:{name}")] += g.sum(axis=0)
        if name not in seen:
            grads[f"deg:{FALLBACK}"] += g.T @ t.degree
            continue
        if t.cat_rows is not None:
            grads["emb"] += t.cat_rows.T @ g
        for pos, z in t.numeric.items():
            grads[f"num:{name}:{pos}"] += g.T @ z
        if t.key_only:
            grads[f"deg:{name}"] += g.T @ t.degree
    return loss, grads, logits


# ---------------------------------------------------------------------------
# public API


@dataclass
class GnnModel:
    config: TrainConfig
    target: str
    classes: tuple
    bucket_ids: np.ndarray
    params: dict
    fingerprint: str
    losses: list = field(default_factory=list, repr=False)
    train_eval: EvalResult | None = None
    _eval_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def to_json(self) -> dict:
        return {
            "format": "augraph-gnn",
            "version": 1,
            "config": self.config.to_json(),
            "target": self.target,
            "classes": list(self.classes),
            "fingerprint": self.fingerprint,
            "bucket_ids": self.bucket_ids.tolist(),
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in sorted(self.params.items())},
        }

    @classmethod
    def from_json(cls, blob: dict) -> "GnnModel":
        if blob.get("format") != "augraph-gnn" or blob.get("version") != 1:
            raise ValidationError("not an augraph model checkpoint", "bad_checkpoint")
        params = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in blob["params"].items()}
        return cls(TrainConfig(**blob["config"]), blob["target"], tuple(blob["classes"]),
                   np.asarray(blob["bucket_ids"], dtype=np.int64), params, blob["fingerprint"])

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _labels(db: Database, split: str):
    rows = db.split_rows(split)
    return rows, db.label_vector()[rows]


def init_model(g: _GraphReads, db: Database, cfg: TrainConfig) -> tuple[GnnModel, _Compiled]:
    task = db.require_task()
    bucket_ids = _graph_buckets(g, db)
    c = _compile(g, db, bucket_ids)
    shapes = _param_shapes(c, cfg, len(bucket_ids), len(task.classes))
    params = _init_params(shapes, bucket_ids, cfg)
    return GnnModel(cfg, task.target, task.classes, bucket_ids, params, g.fingerprint()), c


def train(g: _GraphReads, db: Database, cfg: TrainConfig = TrainConfig()) -> GnnModel:
    """Full-batch gradient descent with momentum on the training vertices."""
    model, c = init_model(g, db, cfg)
    rows, y = _labels(db, "train")
    if len(rows) == 0:
        raise ValidationError("empty training set", "empty_train")
    if len(np.unique(y)) < 2:
        raise NumericError("training set contains a single class", "single_class")
    params = model.params
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    for epoch in range(cfg.epochs):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads, _ = _loss_and_grad(params, c, cfg, rows, y)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss at epoch {epoch}", "non_finite", epoch=epoch)
        model.losses.append(float(loss))
        for k in params:
            velocity[k] = cfg.momentum * velocity[k] - cfg.lr * grads[k]
            params[k] = params[k] + velocity[k]
    model.train_eval = _evaluate_compiled(model, c, db, "train")
    return model


def _evaluate_compiled(model: GnnModel, c: _Compiled, db: Database, split: str) -> EvalResult:
    rows, y = _labels(db, split)
    if len(rows) == 0:
        raise ValidationError(f"empty {split} split", "empty_split", split=split)
    logits, _ = _forward(model.params, c, model.config)
    p = _softmax(logits[rows])
    if not np.all(np.isfinite(p)):
        raise NumericError("non-finite predictions", "non_finite")
    pred = np.argmax(p, axis=1)
    k = len(model.classes)
    auc = metrics.roc_auc(y, p[:, 1]) if k == 2 else None
    if auc is not None and math.isnan(auc):
        auc = None
    scores = p[:, 1].tolist() if k == 2 else p.tolist()
    return EvalResult(metrics.accuracy(y, pred), metrics.f1_score(y, pred, k), auc, len(rows), scores)


def evaluate(model: GnnModel, g: _GraphReads, db: Database, split: str = "val") -> EvalResult:
    """Forward pass only; types unseen during training use the fallback parameters."""
    if split not in ("train", "val", "test"):
        raise ValidationError(f"unknown split {split!r}", "bad_split")
    c = _compile(g, db, model.bucket_ids)
    return _evaluate_compiled(model, c, db, split)


def gradient_check(cfg: TrainConfig, g: _GraphReads, db: Database, step: float = 1e-5,
                   params: dict | None = None) -> float:
    """Max relative error between analytic and central-difference gradients of the training loss.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-6)``; the floor keeps
    near-zero gradients from dividing round-off by round-off.
    """
    model, c = init_model(g, db, cfg)
    if params is not None:
        model.params = {k: np.asarray(params[k], dtype=np.float64).copy() for k in model.params}
    rows, y = _labels(db, "train")
    p = model.params
    _, grads, _ = _loss_and_grad(p, c, cfg, rows, y)
    worst = 0.0
    for name, arr in p.items():
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = _loss_and_grad(p, c, cfg, rows, y, need_grad=False)[0]
            flat[i] = old - step
            down = _loss_and_grad(p, c, cfg, rows, y, need_grad=False)[0]
            flat[i] = old
            num = (up - down) / (2 * step)
            err = abs(num - gflat[i]) / max(abs(num), abs(gflat[i]), 1e-6)
            worst = max(worst, err)
    return worst


def loss_and_grad(model: GnnModel, g: _GraphReads, db: Database):
    """Training loss and its analytic gradient at the model's current parameters."""
    c = _compile(g, db, model.bucket_ids)
    rows, y = _labels(db, "train")
    loss, grads, _ = _loss_and_grad(model.params, c, model.config, rows, y)
    return loss, grads
