"""Random small databases and brute-force reference implementations.

The reference functions below deliberately avoid the package's join,
graph and scoring code: they materialize joins with nested loops, build
adjacency lists from raw rows and enumerate pairs explicitly.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter, deque
from itertools import combinations

import numpy as np

from augraph.relational import attach_task, load_database, load_task, parse_schema


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def random_db(rng: np.random.Generator, max_rows: int = 50, three_tables: bool = False, target: str | None = None,
              missing: float = 0.1, n_classes: int = 2, train_frac: float = 0.6, ensure_val: bool = False):
    """Parent/child (optionally plus a second parent) database with small categorical and int attributes.

    Returns the database with a task attached on ``target`` (random when None).
    ``ensure_val`` puts the second target row in the validation split when there are at least three.
    """
    n_p = int(rng.integers(2, max_rows + 1))
    n_c = int(rng.integers(2, max_rows + 1))
    n_q = int(rng.integers(2, max_rows + 1)) if three_tables else 0
    schema = ["relation parent(pid:key, pa:cat?, pb:int?)",
              "relation child(cid:key, pid:fk(parent)?, ca:cat?, cb:int?" + (", qid:fk(other)?" if three_tables else "")
              + ")"]
    if three_tables:
        schema.append("relation other(qid:key, qa:cat?)")

    def cat(k):
        return "" if rng.random() < missing else f"c{int(rng.integers(0, k))}"

    def num(k):
        return "" if rng.random() < missing else str(int(rng.integers(0, k)))

    tables = {
        "parent": _csv(["pid", "pa", "pb"], [[f"p{i}", cat(3), num(4)] for i in range(n_p)]),
    }
    child_rows = []
    for i in range(n_c):
        fk = "" if rng.random() < missing else f"p{int(rng.integers(0, n_p))}"
        row = [f"c{i}", fk, cat(4), num(3)]
        if three_tables:
            row.append("" if rng.random() < missing else f"q{int(rng.integers(0, n_q))}")
        child_rows.append(row)
    tables["child"] = _csv(["cid", "pid", "ca", "cb"] + (["qid"] if three_tables else []), child_rows)
    if three_tables:
        tables["other"] = _csv(["qid", "qa"], [[f"q{i}", cat(2)] for i in range(n_q)])

    names = ["parent", "child"] + (["other"] if three_tables else [])
    if target is None:
        target = names[int(rng.integers(0, len(names)))]
    n_t = {"parent": n_p, "child": n_c, "other": n_q}[target]
    prefix = {"parent": "p", "child": "c", "other": "q"}[target]
    labels = [str(int(rng.integers(0, n_classes))) for _ in range(n_t)]
    labels[0], labels[-1] = "0", "1"
    split = ["train" if rng.random() < train_frac else ("val" if rng.random() < 0.5 else "test") for _ in range(n_t)]
    split[0] = split[-1] = "train"
    if ensure_val and n_t >= 3:
        split[1] = "val"
    task_text = _csv(["key", "label", "split"], [[f"{prefix}{i}", labels[i], split[i]] for i in range(n_t)])
    db = load_database(parse_schema("\n".join(schema)), tables)
    return attach_task(db, load_task(task_text, target))


# ---------------------------------------------------------------------------
# reference implementations


def _links(db):
    return [link for link in db.schema.links if "_train" not in (link.source, link.target)]


def _relations(db):
    return [n for n in db.schema.names if n != "_train"]


def ref_join_rows(db, root):
    """Materialized left join from every train row of ``root``: list of {relation: row index or None}."""
    train_keys = {k for k, s in db.task.split.items() if s == "train"}
    rows = [{root: i} for i, r in enumerate(db.tables[root]) if r[0] in train_keys]
    seen, order, queue = {root}, [], deque([root])
    while queue:
        cur = queue.popleft()
        for link in _links(db):
            for here, there in ((link.source, link.target), (link.target, link.source)):
                if here == cur and there not in seen:
                    seen.add(there)
                    order.append((cur, there, link))
                    queue.append(there)
    for cur, nxt, link in order:
        j = link.position - 1
        grown = []
        for row in rows:
            i = row[cur]
            matches = []
            if i is not None:
                for k, other in enumerate(db.tables[nxt]):
                    if link.source == cur:
                        hit = db.tables[cur][i][j] is not None and db.tables[cur][i][j] == other[0]
                    else:
                        hit = other[j] is not None and other[j] == db.tables[cur][i][0]
                    if hit:
                        matches.append(k)
            for k in matches or [None]:
                grown.append({**row, nxt: k})
        rows = grown
    return rows


def ref_mi(db, relation, position, transform=lambda v: v):
    """MI between the attribute and the label over the materialized join; missing values dropped.

    None when the joined table has no row with the attribute present.
    """
    target = db.task.target
    label_of = {db.tables[target][i][0]: None for i in range(len(db.tables[target]))}
    for k, y in db.task.labels.items():
        label_of[k] = y
    pairs = []
    for row in ref_join_rows(db, target):
        i = row.get(relation)
        if i is None:
            continue
        a = db.tables[relation][i][position - 1]
        if a is None:
            continue
        pairs.append((transform(a), label_of[db.tables[target][row[target]][0]]))
    n = len(pairs)
    if n == 0:
        return None
    joint = Counter(pairs)
    pa = Counter(a for a, _ in pairs)
    py = Counter(y for _, y in pairs)
    total = 0.0
    for (a, y), c in sorted(joint.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
        total += (c / n) * math.log((c / n) / ((pa[a] / n) * (py[y] / n)))
    return total


def ref_adjacency(db, promoted=()):
    """Undirected adjacency over tuple vertices plus value vertices for each promoted (relation, position)."""
    adj: dict = {}

    def link(u, v):
        adj.setdefault(u, set()).add(v)
        adj.setdefault(v, set()).add(u)

    for rel in _relations(db):
        for i in range(len(db.tables[rel])):
            adj.setdefault((rel, i), set())
    for lk in _links(db):
        j = lk.position - 1
        for i, r in enumerate(db.tables[lk.source]):
            for k, t in enumerate(db.tables[lk.target]):
                if r[j] is not None and r[j] == t[0]:
                    link((lk.source, i), (lk.target, k))
    for rel, pos in promoted:
        for i, r in enumerate(db.tables[rel]):
            if r[pos - 1] is not None:
                link((rel, i), ("value", rel, pos, r[pos - 1]))
    return adj


def ref_entropy_gain(db, relation, position, d):
    """Mean over train vertices of H(d-hop train labels) before minus after promotion, by explicit BFS."""
    target = db.task.target
    train = {}
    for i, r in enumerate(db.tables[target]):
        if db.task.split.get(r[0]) == "train":
            train[(target, i)] = db.task.labels[r[0]]

    def entropies(adj):
        out = []
        for v in sorted(train):
            dist = {v: 0}
            queue = deque([v])
            while queue:
                u = queue.popleft()
                if dist[u] == d:
                    continue
                for w in sorted(adj[u], key=repr):
                    if w not in dist:
                        dist[w] = dist[u] + 1
                        queue.append(w)
            labels = [train[u] for u in dist if u in train and u != v]
            if not labels:
                out.append(0.0)
                continue
            counts = Counter(labels)
            out.append(-sum(c / len(labels) * math.log(c / len(labels)) for c in counts.values()))
        return out

    before = entropies(ref_adjacency(db))
    after = entropies(ref_adjacency(db, [(relation, position)]))
    return float(np.mean(np.asarray(before) - np.asarray(after)))


def ref_path_counts(db, relation, position, transform=lambda v: v):
    """(connected pairs, disagreeing pairs) over all unordered train pairs."""
    target = db.task.target
    reach: dict = {}
    for row in ref_join_rows(db, target):
        t = row[target]
        reach.setdefault(t, set())
        i = row.get(relation)
        if i is not None and db.tables[relation][i][position - 1] is not None:
            reach[t].add(transform(db.tables[relation][i][position - 1]))
    labels = {t: db.task.labels[db.tables[target][t][0]] for t in reach}
    connected = disagree = 0
    for u, v in combinations(sorted(reach), 2):
        if reach[u] & reach[v]:
            connected += 1
            disagree += labels[u] != labels[v]
    return connected, disagree


def ref_fk_edge_count(db) -> int:
    total = 0
    for lk in db.schema.links:
        j = lk.position - 1
        for r in db.tables[lk.source]:
            for t in db.tables[lk.target]:
                total += r[j] is not None and r[j] == t[0]
    return total


def ref_knn(x: np.ndarray, k: int) -> set:
    """Symmetrized k-nearest-neighbour edge set by full distance matrix; ties by lower index."""
    n = len(x)
    edges = set()
    for i in range(n):
        dists = [(float(np.sum((x[i] - x[j]) ** 2)), j) for j in range(n) if j != i]
        dists.sort()
        for _, j in dists[:k]:
            edges.add((min(i, j), max(i, j)))
    return edges
