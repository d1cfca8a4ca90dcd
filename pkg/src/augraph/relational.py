"""Relational schemas, databases and prediction tasks.

A schema is written in a small descriptor language, one relation per block::

    # comments run to end of line
    relation customer(customer_id:key, region:cat, age:int?)
    relation orders(order_id:key, customer_id:fk(customer), amount:float)

The first attribute of every relation is its primary key. ``fk(<relation>)``
columns reference the primary key of another relation; a trailing ``?`` marks
a column where empty cells are allowed.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import SchemaSyntaxError, ValidationError

log = logging.getLogger(__name__)

KEY, FK, CAT, INT, FLOAT = "key", "fk", "cat", "int", "float"
SPLITS = ("train", "val", "test")
TRAIN_RELATION = "_train"

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


@dataclass(frozen=True)
class AttrType:
    kind: str
    target: str | None = None
    nullable: bool = False

    def __str__(self) -> str:
        base = f"fk({self.target})" if self.kind == FK else self.kind
        return base + ("?" if self.nullable else "")

    @property
    def is_structural(self) -> bool:
        return self.kind in (KEY, FK)


@dataclass(frozen=True)
class RelationDecl:
    name: str
    attr_names: tuple[str, ...]
    attr_types: tuple[AttrType, ...]

    @property
    def arity(self) -> int:
        return len(self.attr_types)

    def position(self, attr_name: str) -> int:
        """1-based position of a named attribute."""
        try:
            return self.attr_names.index(attr_name) + 1
        except ValueError:
            raise ValidationError(f"relation {self.name} has no attribute {attr_name!r}", "unknown_attribute") from None

    def attr_type(self, position: int) -> AttrType:
        return self.attr_types[position - 1]

    def attr_name(self, position: int) -> str:
        return self.attr_names[position - 1]


@dataclass(frozen=True)
class ForeignKeyLink:
    source: str
    position: int
    target: str

    def __str__(self) -> str:
        return f"({self.source}, {self.position}, {self.target})"


@dataclass(frozen=True)
class Schema:
    relations: tuple[RelationDecl, ...]
    links: tuple[ForeignKeyLink, ...] = field(default=())

    def __post_init__(self):
        seen = set()
        for rel in self.relations:
            if rel.name in seen:
                raise ValidationError(f"duplicate relation {rel.name!r}", "duplicate_relation", relation=rel.name)
            seen.add(rel.name)
        for link in self.links:
            if link.source not in seen or link.target not in seen:
                raise ValidationError(f"link {link} names an undeclared relation", "dangling_link", link=str(link))
            arity = self.relation(link.source).arity
            lo = 1 if link.source == TRAIN_RELATION else 2
            if not lo <= link.position <= arity:
                raise ValidationError(f"link {link} has invalid position", "fk_position", link=str(link))

    @classmethod
    def from_relations(cls, relations: Iterable[RelationDecl]) -> "Schema":
        relations = tuple(relations)
        links = []
        for rel in relations:
            for pos, t in enumerate(rel.attr_types, start=1):
                if t.kind == FK or (t.kind == KEY and t.target is not None):
                    links.append(ForeignKeyLink(rel.name, pos, t.target))
        return cls(relations, tuple(links))

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.relations]

    def relation(self, name: str) -> RelationDecl:
        for rel in self.relations:
            if rel.name == name:
                return rel
        raise ValidationError(f"unknown relation {name!r}", "unknown_relation", relation=name)

    def __contains__(self, name: str) -> bool:
        return any(r.name == name for r in self.relations)

    def to_text(self) -> str:
        lines = []
        for rel in self.relations:
            if rel.name == TRAIN_RELATION:
                continue
            attrs = ", ".join(f"{n}:{t}" for n, t in zip(rel.attr_names, rel.attr_types))
            lines.append(f"relation {rel.name}({attrs})")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# descriptor parsing

_TOKEN = re.compile(r"\s+|#[^\n]*|[A-Za-z_][A-Za-z0-9_]*|[():,?]|.")


def _tokens(text: str):
    line, line_start = 1, 0
    for m in _TOKEN.finditer(text):
        tok = m.group()
        col = m.start() - line_start + 1
        if tok[0].isspace() or tok[0] == "#":
            nl = tok.count("\n")
            if nl:
                line += nl
                line_start = m.start() + tok.rfind("\n") + 1
            continue
        yield tok, line, col


class _Parser:
    def __init__(self, text: str):
        self.toks = list(_tokens(text))
        self.i = 0
        self.end = (None, text.count("\n") + 1, 1)

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else self.end

    def take(self, expected: str | None = None, what: str | None = None):
        tok, line, col = self.peek()
        if tok is None:
            raise SchemaSyntaxError(f"unexpected end of input, expected {what or expected!r}", line, col)
        if expected is not None and tok != expected:
            raise SchemaSyntaxError(f"expected {expected!r}, found {tok!r}", line, col)
        self.i += 1
        return tok, line, col

    def ident(self, what: str):
        tok, line, col = self.take(what=what)
        if not _IDENT.match(tok):
            raise SchemaSyntaxError(f"expected {what}, found {tok!r}", line, col)
        return tok, line, col


def parse_schema(descriptor_text: str) -> Schema:
    p = _Parser(descriptor_text)
    relations: list[RelationDecl] = []
    positions: dict[str, tuple[int, int]] = {}
    fk_sites: list[tuple[str, int, str, int, int]] = []
    while p.peek()[0] is not None:
        kw, line, col = p.take(what="'relation'")
        if kw != "relation":
            raise SchemaSyntaxError(f"expected 'relation', found {kw!r}", line, col)
        name, nline, ncol = p.ident("relation name")
        if name == TRAIN_RELATION:
            raise ValidationError(f"relation name {name!r} is reserved", "reserved_name", line=nline, column=ncol)
        if name in positions:
            raise ValidationError(
                f"duplicate relation {name!r} (line {nline}, column {ncol})",
                "duplicate_relation", relation=name, line=nline, column=ncol,
            )
        positions[name] = (nline, ncol)
        p.take("(")
        names, types = [], []
        while True:
            aname, aline, acol = p.ident("attribute name")
            if aname in names:
                raise SchemaSyntaxError(f"duplicate attribute {aname!r} in {name}", aline, acol)
            p.take(":")
            tname, tline, tcol = p.ident("attribute type")
            target = None
            if tname == FK:
                p.take("(")
                target, fline, fcol = p.ident("referenced relation")
                p.take(")")
                fk_sites.append((name, len(names) + 1, target, fline, fcol))
            elif tname not in (KEY, CAT, INT, FLOAT):
                raise SchemaSyntaxError(f"unknown type {tname!r}", tline, tcol)
            nullable = False
            if p.peek()[0] == "?":
                _, qline, qcol = p.take("?")
                if tname == KEY:
                    raise SchemaSyntaxError("key attributes cannot be missing-allowed", qline, qcol)
                nullable = True
            pos = len(names) + 1
            if pos == 1 and tname == FK:
                raise ValidationError(
                    f"foreign key at position 1 of {name} (line {tline}, column {tcol})",
                    "fk_position", relation=name, line=tline, column=tcol,
                )
            if pos == 1 and tname != KEY:
                raise SchemaSyntaxError(f"first attribute of {name} must be the key", tline, tcol)
            if pos > 1 and tname == KEY:
                raise SchemaSyntaxError(f"only position 1 of {name} may be a key", tline, tcol)
            names.append(aname)
            types.append(AttrType(tname, target, nullable))
            sep, sline, scol = p.take(what="',' or ')'")
            if sep == ")":
                break
            if sep != ",":
                raise SchemaSyntaxError(f"expected ',' or ')', found {sep!r}", sline, scol)
        relations.append(RelationDecl(name, tuple(names), tuple(types)))
    for rel, pos, target, line, col in fk_sites:
        if target not in positions:
            raise ValidationError(
                f"{rel}.{pos} references undeclared relation {target!r} (line {line}, column {col})",
                "dangling_fk", relation=rel, position=pos, target=target, line=line, column=col,
            )
    if not relations:
        raise ValidationError("schema declares no relations", "empty_schema")
    return Schema.from_relations(relations)


# ---------------------------------------------------------------------------
# databases


def _norm(cell: str) -> str:
    return cell.strip()


@dataclass(frozen=True)
class TaskSpec:
    target: str
    labels: Mapping[str, str]
    split: Mapping[str, str]
    classes: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.classes:
            object.__setattr__(self, "classes", tuple(sorted(set(self.labels.values()))))
        bad = [k for k, s in self.split.items() if s not in SPLITS]
        if bad:
            raise ValidationError(f"invalid split for key {bad[0]!r}: {self.split[bad[0]]!r}", "bad_split", key=bad[0])
        unknown = [k for k, y in self.labels.items() if y not in self.classes]
        if unknown:
            raise ValidationError(f"label of {unknown[0]!r} not in label space", "bad_label", key=unknown[0])
        missing = set(self.labels) ^ set(self.split)
        if missing:
            k = sorted(missing)[0]
            raise ValidationError(f"key {k!r} needs both a label and a split", "bad_task", key=k)

    @property
    def binary(self) -> bool:
        return len(self.classes) == 2

    def keys(self, split: str) -> list[str]:
        return [k for k, s in self.split.items() if s == split]


class Database:
    """Validated tables for a schema; immutable after construction."""

    def __init__(self, schema: Schema, tables: Mapping[str, Sequence[tuple]], task: TaskSpec | None = None):
        self.schema = schema
        self.tables: dict[str, tuple[tuple, ...]] = {r.name: tuple(tables[r.name]) for r in schema.relations}
        self.task = task
        self.key_index: dict[str, dict[str, int]] = {}
        for rel in schema.relations:
            index: dict[str, int] = {}
            for i, row in enumerate(self.tables[rel.name]):
                if row[0] in index:
                    raise ValidationError(
                        f"duplicate primary key {row[0]!r} in {rel.name}",
                        "duplicate_key", relation=rel.name, key=row[0],
                    )
                index[row[0]] = i
            self.key_index[rel.name] = index

    def relation(self, name: str) -> RelationDecl:
        return self.schema.relation(name)

    def column(self, relation: str, position: int) -> list:
        return [row[position - 1] for row in self.tables[relation]]

    # task helpers -------------------------------------------------------

    def require_task(self) -> TaskSpec:
        if self.task is None:
            raise ValidationError("no prediction task attached", "no_task")
        return self.task

    def split_rows(self, split: str) -> np.ndarray:
        """Target-table row indices of one split, in table order."""
        task = self.require_task()
        index = self.key_index[task.target]
        rows = sorted(index[k] for k, s in task.split.items() if s == split)
        return np.asarray(rows, dtype=np.int64)

    def label_vector(self) -> np.ndarray:
        """Class index per target row, -1 where unlabeled."""
        task = self.require_task()
        cls = {c: i for i, c in enumerate(task.classes)}
        out = np.full(len(self.tables[task.target]), -1, dtype=np.int64)
        index = self.key_index[task.target]
        for k, y in task.labels.items():
            out[index[k]] = cls[y]
        return out


def _parse_value(cell: str, t: AttrType, strict_fk: bool, where: str):
    v = _norm(cell)
    if v == "":
        if t.kind == KEY:
            raise ValidationError(f"missing primary key at {where}", "missing_key", where=where)
        if t.nullable or (t.kind == FK and not strict_fk):
            return None
        raise ValidationError(f"missing value at {where} for non-nullable {t}", "missing_value", where=where)
    if t.kind in (KEY, FK, CAT):
        return v
    try:
        return int(v) if t.kind == INT else float(v)
    except ValueError:
        raise ValidationError(f"unparseable {t.kind} value {v!r} at {where}", "bad_value", where=where) from None


def load_database(schema: Schema, table_sources: Mapping[str, str], strict_fk: bool = True) -> Database:
    """Parse one CSV text per relation and enforce key and foreign-key constraints.

    With ``strict_fk=False`` empty FK cells are accepted for every FK column
    and dangling references are blanked (with a warning) instead of rejected.
    """
    tables: dict[str, list[tuple]] = {}
    for rel in schema.relations:
        if rel.name not in table_sources:
            raise ValidationError(f"no table supplied for relation {rel.name}", "missing_table", relation=rel.name)
        reader = csv.reader(io.StringIO(table_sources[rel.name]))
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"table {rel.name} has no header row", "missing_header", relation=rel.name)
        header = [_norm(h) for h in header]
        if tuple(header) != rel.attr_names:
            raise ValidationError(
                f"header of {rel.name} is {header}, expected {list(rel.attr_names)}",
                "header_mismatch", relation=rel.name,
            )
        rows = []
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != rel.arity:
                raise ValidationError(
                    f"{rel.name} line {lineno}: expected {rel.arity} fields, got {len(cells)}",
                    "arity_mismatch", relation=rel.name, line=lineno,
                )
            rows.append(tuple(
                _parse_value(c, t, strict_fk, f"{rel.name} line {lineno} column {n}")
                for c, t, n in zip(cells, rel.attr_types, rel.attr_names)
            ))
        tables[rel.name] = rows
    # primary keys first so FK checks can use the index
    keysets = {}
    for name, rows in tables.items():
        seen: set = set()
        for row in rows:
            if row[0] in seen:
                raise ValidationError(
                    f"duplicate primary key {row[0]!r} in {name}", "duplicate_key", relation=name, key=row[0],
                )
            seen.add(row[0])
        keysets[name] = seen
    for link in schema.links:
        j = link.position - 1
        rows = tables[link.source]
        for i, row in enumerate(rows):
            v = row[j]
            if v is None or v in keysets[link.target]:
                continue
            if strict_fk:
                raise ValidationError(
                    f"referential integrity violated for link {link}: tuple {row!r} references missing {v!r}",
                    "referential_integrity", link=str(link), tuple=list(row),
                )
            log.warning("blanking dangling reference %r in %s (link %s)", v, link.source, link)
            rows[i] = row[:j] + (None,) + row[j + 1:]
    return Database(schema, tables)


def load_task(text: str, target: str, classes: Sequence[str] | None = None) -> TaskSpec:
    """Read a ``key,label,split`` CSV."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or [_norm(f) for f in reader.fieldnames] != ["key", "label", "split"]:
        raise ValidationError("task file must have header key,label,split", "bad_task_header")
    labels, split = {}, {}
    for lineno, row in enumerate(reader, start=2):
        row = {_norm(k): _norm(v or "") for k, v in row.items() if k is not None}
        key = row["key"]
        if key in labels:
            raise ValidationError(f"task line {lineno}: key {key!r} assigned twice", "duplicate_task_key", key=key)
        labels[key] = row["label"]
        split[key] = row["split"]
    return TaskSpec(target, labels, split, tuple(classes) if classes else ())


def task_to_csv(task: TaskSpec, order: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "label", "split"])
    for k in order if order is not None else task.labels:
        w.writerow([k, task.labels[k], task.split[k]])
    return buf.getvalue()


def attach_task(db: Database, task: TaskSpec) -> Database:
    """Encode the task as a binary training relation ``(key, label)`` linked to the target."""
    if db.task is not None or TRAIN_RELATION in db.schema:
        raise ValidationError("a task is already attached to this database", "task_attached")
    target = db.schema.relation(task.target)
    index = db.key_index[target.name]
    absent = [k for k in task.labels if k not in index]
    if absent:
        raise ValidationError(
            f"labeled key {absent[0]!r} absent from {target.name}", "unknown_key", key=absent[0], relation=target.name,
        )
    train_rows = sorted(index[k] for k in task.keys("train"))
    if not train_rows:
        raise ValidationError("empty training set", "empty_train")
    rows = db.tables[target.name]
    train_table = tuple((rows[i][0], task.labels[rows[i][0]]) for i in train_rows)
    decl = RelationDecl(TRAIN_RELATION, ("key", "label"), (AttrType(KEY, target.name), AttrType(CAT)))
    schema = Schema(db.schema.relations + (decl,), db.schema.links + (ForeignKeyLink(TRAIN_RELATION, 1, target.name),))
    tables = dict(db.tables)
    tables[TRAIN_RELATION] = train_table
    return Database(schema, tables, task)


def extract_label_column(
    schema: Schema, table_sources: Mapping[str, str], relation: str, column: str,
    split_seed: int, fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
) -> tuple[Schema, dict[str, str], TaskSpec]:
    """Move a label column out of a table into a TaskSpec with a seeded random split.

    The label never reaches the graph, so it cannot be promoted.
    """
    decl = schema.relation(relation)
    pos = decl.position(column)
    if decl.attr_type(pos).is_structural:
        raise ValidationError(f"{relation}.{column} is a key column", "bad_label_column")
    reader = csv.reader(io.StringIO(table_sources[relation]))
    rows = [r for r in reader if r]
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    labels = {}
    for i, r in enumerate(rows):
        if i and len(r) == decl.arity and _norm(r[pos - 1]) != "":
            labels[_norm(r[0])] = _norm(r[pos - 1])
        w.writerow(r[:pos - 1] + r[pos:])
    keys = list(labels)
    rng = np.random.default_rng(split_seed)
    perm = rng.permutation(len(keys))
    n_train = int(round(fractions[0] * len(keys)))
    n_val = int(round(fractions[1] * len(keys)))
    split = {}
    for rank, i in enumerate(perm):
        split[keys[i]] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
    new_decl = RelationDecl(
        relation, decl.attr_names[:pos - 1] + decl.attr_names[pos:], decl.attr_types[:pos - 1] + decl.attr_types[pos:],
    )
    new_schema = Schema.from_relations(new_decl if r.name == relation else r for r in schema.relations)
    sources = dict(table_sources)
    sources[relation] = out.getvalue()
    return new_schema, sources, TaskSpec(relation, labels, split)


# ---------------------------------------------------------------------------
# join machinery for the fully joined training table


@dataclass(frozen=True)
class JoinEdge:
    parent: str
    child: str
    link: ForeignKeyLink

    @property
    def upward(self) -> bool:
        """True when the parent row holds the FK value (many-to-one step)."""
        return self.link.source == self.parent


def join_tree(schema: Schema, root: str) -> list[JoinEdge]:
    """BFS over FK links from ``root``; each relation is reached once along a shortest path."""
    visited = {root}
    edges: list[JoinEdge] = []
    queue = deque([root])
    while queue:
        cur = queue.popleft()
        for link in schema.links:
            if TRAIN_RELATION in (link.source, link.target):
                continue
            if link.source == cur and link.target not in visited:
                nxt = link.target
            elif link.target == cur and link.source not in visited:
                nxt = link.source
            else:
                continue
            visited.add(nxt)
            edges.append(JoinEdge(cur, nxt, link))
            queue.append(nxt)
    return edges


def _matches(db: Database, edge: JoinEdge) -> list[list[int]]:
    """For each parent row, the child rows it joins with."""
    j = edge.link.position - 1
    parent_rows = db.tables[edge.parent]
    if edge.upward:
        index = db.key_index[edge.child]
        return [[index[r[j]]] if r[j] is not None and r[j] in index else [] for r in parent_rows]
    by_ref: dict[str, list[int]] = {}
    for i, r in enumerate(db.tables[edge.child]):
        if r[j] is not None:
            by_ref.setdefault(r[j], []).append(i)
    return [by_ref.get(r[0], []) for r in parent_rows]


def joined_value_counts(db: Database, relation: str, values: Sequence, root: str | None = None) -> list[dict]:
    """Per root row, the multiset of ``values`` (aligned with ``relation``'s rows) in its left join.

    Each root row expands to the rows of the left join of every relation
    reachable from the root. The returned dict maps each non-missing value
    of the attribute to its row multiplicity in that expansion.
    """
    root = root or db.require_task().target
    tree = join_tree(db.schema, root)
    reached = {root} | {e.child for e in tree}
    dropped = [n for n in db.schema.names if n not in reached and n != TRAIN_RELATION]
    if dropped:
        log.warning("relations unreachable from %s are left out of the join: %s", root, ", ".join(dropped))
    if relation not in reached:
        raise ValidationError(
            f"relation {relation} is not reachable from {root} via foreign keys", "unreachable", relation=relation,
        )
    children: dict[str, list[JoinEdge]] = {}
    parent_edge: dict[str, JoinEdge] = {}
    for e in tree:
        children.setdefault(e.parent, []).append(e)
        parent_edge[e.child] = e
    matches = {e.child: _matches(db, e) for e in tree}

    # left-join multiplicity of every subtree, bottom-up
    mult: dict[str, list[int]] = {}
    for name in [e.child for e in reversed(tree)] + [root]:
        m = [1] * len(db.tables[name])
        for e in children.get(name, []):
            sub = mult[e.child]
            for x, ys in enumerate(matches[e.child]):
                m[x] *= sum(sub[y] for y in ys) if ys else 1
        mult[name] = m

    path = [relation]
    while path[-1] != root:
        path.append(parent_edge[path[-1]].parent)
    cur = [({} if v is None else {v: mult[relation][i]}) for i, v in enumerate(values)]
    for child, name in zip(path, path[1:]):
        nxt = []
        for x in range(len(db.tables[name])):
            other = 1
            for e in children[name]:
                if e.child != child:
                    ys = matches[e.child][x]
                    other *= sum(mult[e.child][y] for y in ys) if ys else 1
            acc: dict = {}
            for y in matches[child][x]:
                for v, c in cur[y].items():
                    acc[v] = acc.get(v, 0) + c * other
            nxt.append(acc)
        cur = nxt
    return cur
