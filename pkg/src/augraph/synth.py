"""Synthetic relational benchmark with a known label-generating attribute subset.

The default layout is a star: a ``transactions`` fact table (the prediction
target) referencing ``customers`` and ``articles``. Three categorical signal
attributes sit in the two dimension tables; each defines an indicator
"value lies in a designated half of the domain", and the label is the
majority vote of the three indicators, flipped with probability
``label_noise``. Remaining attributes are independent noise.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .relational import Database, attach_task, load_database, load_task, parse_schema
from .seeds import rng as sub_rng

TARGET = "transactions"
TABULAR_TARGET = "records"


@dataclass(frozen=True)
class SynthConfig:
    n_target: int = 2000
    n_parent: int = 200
    n_noise_attrs: int = 5
    cardinality: int = 6
    label_noise: float = 0.05
    split: tuple = (0.7, 0.15, 0.15)
    seed: int = 0
    tabular: bool = False
    redundant_third: bool = False

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ValidationError("split fractions must be non-negative and sum to 1", "bad_config")
        if not 0 <= self.label_noise < 1 or self.cardinality < 2 or self.n_target < 1 or self.n_parent < 1:
            raise ValidationError("invalid synthetic generator settings", "bad_config")


@dataclass
class SynthDataset:
    schema_text: str
    tables: dict
    task_text: str
    target: str
    ground_truth: list = field(default_factory=list)  # "relation.attribute"

    def database(self, strict_fk: bool = True) -> Database:
        db = load_database(parse_schema(self.schema_text), self.tables, strict_fk=strict_fk)
        return attach_task(db, load_task(self.task_text, self.target))

    def ground_truth_json(self) -> str:
        return json.dumps({"target": self.target, "attributes": self.ground_truth}, indent=2) + "\n"

    def write(self, out: str | Path) -> Path:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "schema.txt").write_text(self.schema_text)
        for name, text in self.tables.items():
            (out / f"{name}.csv").write_text(text)
        (out / "task.csv").write_text(self.task_text)
        (out / "ground_truth.json").write_text(self.ground_truth_json())
        return out


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


@dataclass
class _Column:
    name: str
    kind: str  # cat | float
    values: list
    role: str = "noise"


def generate(cfg: SynthConfig = SynthConfig()) -> SynthDataset:
    card = cfg.cardinality
    domain = [f"v{i}" for i in range(card)]
    r_layout = sub_rng(cfg.seed, "synth", "layout")
    r_values = sub_rng(cfg.seed, "synth", "values")
    r_label = sub_rng(cfg.seed, "synth", "labels")
    r_split = sub_rng(cfg.seed, "synth", "split")

    if cfg.tabular:
        relations = {TABULAR_TARGET: cfg.n_target}
        target = TABULAR_TARGET
        signal_homes = [TABULAR_TARGET] * 3
        noise_homes = [TABULAR_TARGET] * cfg.n_noise_attrs
    else:
        relations = {TARGET: cfg.n_target, "customers": cfg.n_parent, "articles": cfg.n_parent}
        target = TARGET
        two = "customers" if r_layout.random() < 0.5 else "articles"
        one = "articles" if two == "customers" else "customers"
        signal_homes = [two, one, two]
        cycle = [TARGET, "customers", "articles"]
        noise_homes = [cycle[i % 3] for i in range(cfg.n_noise_attrs)]
    if cfg.redundant_third:
        signal_homes[2] = signal_homes[0]

    columns: dict[str, list[_Column]] = {name: [] for name in relations}
    signals = []
    for k, home in enumerate(signal_homes):
        if cfg.redundant_third and k == 2:
            vals = list(signals[0].values)
        else:
            vals = [domain[i] for i in r_values.integers(0, card, relations[home])]
        col = _Column("", "cat", vals, role=f"signal{k}")
        columns[home].append(col)
        signals.append(col)
    for k, home in enumerate(noise_homes):
        if k == 0:
            # one continuous noise column on the target, exercising binning
            col = _Column("", "float", [f"{x:.2f}" for x in r_values.gamma(2.0, 15.0, relations[home])])
        else:
            col = _Column("", "cat", [domain[i] for i in r_values.integers(0, card, relations[home])])
        columns[home].append(col)

    prefixes = {TARGET: "tx", "customers": "cu", "articles": "ar", TABULAR_TARGET: "f"}
    for name, cols in columns.items():
        order = r_layout.permutation(len(cols))
        shuffled = [cols[i] for i in order]
        for i, col in enumerate(shuffled):
            col.name = f"{prefixes[name]}_{i}"
        columns[name] = shuffled

    halves = [set(r_layout.choice(card, card // 2, replace=False).tolist()) for _ in range(3)]
    if cfg.redundant_third:
        halves[2] = halves[0]

    keys = {name: [f"{prefixes[name]}{i}" for i in range(n)] for name, n in relations.items()}
    fks = {}
    if not cfg.tabular:
        fks["customer_id"] = r_values.integers(0, cfg.n_parent, cfg.n_target)
        fks["article_id"] = r_values.integers(0, cfg.n_parent, cfg.n_target)

    def signal_value(k: int, row: int) -> str:
        home = signal_homes[k]
        if home == target:
            return signals[k].values[row]
        fk = fks["customer_id" if home == "customers" else "article_id"]
        return signals[k].values[fk[row]]

    flips = r_label.random(cfg.n_target) < cfg.label_noise
    labels = []
    for row in range(cfg.n_target):
        votes = sum(int(signal_value(k, row)[1:]) in halves[k] for k in range(3))
        y = int(votes >= 2) ^ int(flips[row])
        labels.append(str(y))

    lines, tables = [], {}
    for name, n in relations.items():
        decl = [f"{prefixes[name]}_id:key"]
        header = [f"{prefixes[name]}_id"]
        body = [[k] for k in keys[name]]
        if name == target and not cfg.tabular:
            decl += ["customer_id:fk(customers)", "article_id:fk(articles)"]
            header += ["customer_id", "article_id"]
            for row in range(n):
                body[row] += [keys["customers"][fks["customer_id"][row]], keys["articles"][fks["article_id"][row]]]
        for col in columns[name]:
            decl.append(f"{col.name}:{col.kind}")
            header.append(col.name)
            for row in range(n):
                body[row].append(col.values[row])
        lines.append(f"relation {name}({', '.join(decl)})")
        tables[name] = _csv(header, body)

    n = cfg.n_target
    perm = r_split.permutation(n)
    n_train = int(round(cfg.split[0] * n))
    n_val = int(round(cfg.split[1] * n))
    split = np.empty(n, dtype=object)
    split[perm[:n_train]] = "train"
    split[perm[n_train:n_train + n_val]] = "val"
    split[perm[n_train + n_val:]] = "test"
    task_text = _csv(["key", "label", "split"], [[keys[target][i], labels[i], split[i]] for i in range(n)])

    ground_truth = [f"{signal_homes[k]}.{signals[k].name}" for k in range(3)]
    return SynthDataset("\n".join(lines) + "\n", tables, task_text, target, ground_truth)


def decision_rule_accuracy(ds: SynthDataset, cfg: SynthConfig) -> float:
    """Accuracy of the noiseless majority rule, recovered from the data alone.

    Each signal attribute's positive half is estimated as the values whose
    empirical positive rate exceeds one half.
    """
    from .graph import AttributeRef, attribute_values
    from .relational import joined_value_counts

    db = ds.database()
    y = db.label_vector()
    votes = np.zeros(len(y), dtype=np.int64)
    for gt in ds.ground_truth:
        rel, attr = gt.split(".")
        ref = AttributeRef(rel, db.relation(rel).position(attr))
        vals, _ = attribute_values(db, ref)
        per_row = [next(iter(c)) for c in joined_value_counts(db, rel, vals)]
        pos = {v for v in set(per_row) if np.mean([yy for yy, w in zip(y, per_row) if w == v]) > 0.5}
        votes += np.asarray([w in pos for w in per_row], dtype=np.int64)
    return float(np.mean((votes >= 2).astype(np.int64) == y))


TINY = SynthConfig(n_target=10, n_parent=3, n_noise_attrs=2, cardinality=3, label_noise=0.0, split=(0.6, 0.2, 0.2))
TINY_TRAIN = dict(hidden=6, epochs=0)


def tiny_instance(seed: int = 0):
    """Small graph for gradient checks: the REG of a tiny synthetic database with one signal promoted."""
    from dataclasses import replace

    from .graph import AttributeRef, build_reg, promote

    ds = generate(replace(TINY, seed=seed))
    db = ds.database()
    rel, name = ds.ground_truth[0].split(".")
    g, _ = promote(build_reg(db), db, AttributeRef(rel, db.relation(rel).position(name)))
    return g, db
