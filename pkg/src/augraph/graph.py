"""Relational entity graphs and attribute promotion."""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .relational import CAT, FLOAT, INT, TRAIN_RELATION, Database

log = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class AttributeRef:
    relation: str
    position: int

    def __str__(self) -> str:
        return f"{self.relation}.{self.position}"

    def name(self, db: Database) -> str:
        return f"{self.relation}.{db.relation(self.relation).attr_name(self.position)}"

    @classmethod
    def parse(cls, text: str, db: Database) -> "AttributeRef":
        """Accept ``rel.attr_name`` or ``rel.position``."""
        rel, _, attr = text.rpartition(".")
        if not rel:
            raise ValidationError(f"attribute reference {text!r} must look like relation.attribute", "bad_attribute")
        decl = db.relation(rel)
        return cls(rel, int(attr) if attr.isdigit() else decl.position(attr))


@dataclass(frozen=True)
class BinPolicy:
    n_bins: int = 8
    int_cardinality_limit: int = 64


DEFAULT_BINS = BinPolicy()


def check_eligible(db: Database, attr: AttributeRef) -> None:
    if attr.relation == TRAIN_RELATION or attr.relation not in db.schema:
        raise ValidationError(f"attribute {attr} is not promotable", "ineligible", attribute=str(attr))
    decl = db.relation(attr.relation)
    if not 2 <= attr.position <= decl.arity or decl.attr_type(attr.position).kind not in (CAT, INT, FLOAT):
        raise ValidationError(f"attribute {attr} is not promotable", "ineligible", attribute=str(attr))


def attribute_values(db: Database, attr: AttributeRef, policy: BinPolicy = DEFAULT_BINS) -> tuple[list, list | None]:
    """Per-row (binned) values of an attribute, None where missing.

    Floats, and integers with more than ``int_cardinality_limit`` distinct
    values, are replaced by their equal-frequency bin index. Returns the values
    and the interior bin edges (None when unbinned).
    """
    check_eligible(db, attr)
    kind = db.relation(attr.relation).attr_type(attr.position).kind
    raw = db.column(attr.relation, attr.position)
    present = [v for v in raw if v is not None]
    if kind == CAT or (kind == INT and len(set(present)) <= policy.int_cardinality_limit) or not present:
        return raw, None
    edges = np.unique(np.quantile(np.asarray(present, dtype=np.float64), np.linspace(0, 1, policy.n_bins + 1)[1:-1]))
    binned = [None if v is None else int(np.searchsorted(edges, v, side="right")) for v in raw]
    return binned, edges.tolist()


def candidate_pool(
    db: Database, policy: BinPolicy = DEFAULT_BINS, near_key_ratio: float = 0.5, include_near_key: bool = False,
) -> list[AttributeRef]:
    """Eligible attributes sorted by (relation, position).

    All-missing attributes are skipped; near-key attributes (more distinct
    values than ``near_key_ratio`` times the row count) are skipped unless
    ``include_near_key``.
    """
    pool = []
    for decl in db.schema.relations:
        if decl.name == TRAIN_RELATION:
            continue
        n = len(db.tables[decl.name])
        for pos in range(2, decl.arity + 1):
            if decl.attr_type(pos).kind not in (CAT, INT, FLOAT):
                continue
            attr = AttributeRef(decl.name, pos)
            values, _ = attribute_values(db, attr, policy)
            distinct = len({v for v in values if v is not None})
            if distinct == 0:
                continue
            if distinct > near_key_ratio * n and not include_near_key:
                log.warning("excluding near-key attribute %s (%d distinct over %d rows)", attr.name(db), distinct, n)
                continue
            pool.append(attr)
    return sorted(pool)


@dataclass(frozen=True)
class VertexType:
    name: str
    kind: str  # relation | train | value
    payloads: Sequence
    relation: str | None = None
    attribute: AttributeRef | None = None

    def __len__(self) -> int:
        return len(self.payloads)


@dataclass(frozen=True, eq=False)
class EdgeSet:
    """Directed edges ``src[i] -> dst[i]`` between two vertex types."""

    name: str
    kind: str  # fk | train | promoted | knn
    src_type: str
    dst_type: str
    src: np.ndarray
    dst: np.ndarray

    def __post_init__(self):
        for a in (self.src, self.dst):
            a.setflags(write=False)

    def __len__(self) -> int:
        return len(self.src)


@dataclass(frozen=True)
class PromotionRecord:
    attribute: AttributeRef
    value_vertex_count: int
    edge_count: int
    order_index: int
    bin_edges: list | None = field(default=None, compare=False)

    def to_json(self, db: Database | None = None) -> dict:
        out = {
            "attribute": str(self.attribute),
            "value_vertex_count": self.value_vertex_count,
            "edge_count": self.edge_count,
            "order_index": self.order_index,
        }
        if db is not None:
            out["name"] = self.attribute.name(db)
        if self.bin_edges is not None:
            out["bin_edges"] = self.bin_edges
        return out


def _payload_json(p) -> str:
    if isinstance(p, tuple):
        p = list(p)
    return json.dumps(p, separators=(",", ":"), ensure_ascii=False)


class _GraphReads:
    """Read-only queries shared by materialized graphs and overlay views."""

    vertex_types: Mapping[str, VertexType]
    edge_sets: Mapping[str, EdgeSet]
    promotions: tuple[PromotionRecord, ...]

    @property
    def num_vertices(self) -> int:
        return sum(len(t) for t in self.vertex_types.values())

    @property
    def num_edges(self) -> int:
        return sum(len(e) for e in self.edge_sets.values())

    @property
    def promoted(self) -> list[AttributeRef]:
        return [r.attribute for r in self.promotions]

    def count(self, vertex_type: str) -> int:
        return len(self.vertex_types[vertex_type])

    def offsets(self) -> dict[str, int]:
        out, off = {}, 0
        for name, t in self.vertex_types.items():
            out[name] = off
            off += len(t)
        return out

    def undirected_adjacency(self, skip_kinds: tuple[str, ...] = ()) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency over all vertices, indexed by ``offsets()``."""
        off = self.offsets()
        rows, cols = [], []
        for e in self.edge_sets.values():
            if e.kind in skip_kinds:
                continue
            s = e.src + off[e.src_type]
            d = e.dst + off[e.dst_type]
            rows += [s, d]
            cols += [d, s]
        n = self.num_vertices
        if not rows:
            return sp.csr_matrix((n, n), dtype=np.float64)
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        a = sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
        a.data[:] = 1.0
        return a

    def neighbors(self, vertex_type: str, vertex_id: int) -> list[tuple[str, int]]:
        """All neighbors across edge sets in both directions, as a sorted multiset."""
        out = []
        for e in self.edge_sets.values():
            if e.src_type == vertex_type:
                out += [(e.dst_type, int(d)) for d in e.dst[e.src == vertex_id]]
            if e.dst_type == vertex_type:
                out += [(e.src_type, int(s)) for s in e.src[e.dst == vertex_id]]
        return sorted(out)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.vertex_types):
            t = self.vertex_types[name]
            h.update(f"V|{name}|{t.kind}|{len(t)}\n".encode())
        for name in sorted(self.edge_sets):
            e = self.edge_sets[name]
            h.update(f"E|{name}|{e.kind}|{e.src_type}|{e.dst_type}|{len(e)}\n".encode())
            h.update(np.ascontiguousarray(e.src, dtype=np.int64).tobytes())
            h.update(np.ascontiguousarray(e.dst, dtype=np.int64).tobytes())
        return h.hexdigest()

    def export_lines(self) -> Iterator[str]:
        """Canonical text export: vertices by (type, payload), then edges."""
        for name in sorted(self.vertex_types):
            t = self.vertex_types[name]
            enc = [_payload_json(p) for p in t.payloads]
            for i in sorted(range(len(t)), key=lambda i: enc[i]):
                yield f"V {name} {i} {enc[i]}"
        for name in sorted(self.edge_sets):
            e = self.edge_sets[name]
            for k in np.lexsort((e.dst, e.src)):
                yield f"E {name} {e.src_type}:{int(e.src[k])} {e.dst_type}:{int(e.dst[k])}"

    def export_text(self) -> str:
        return "".join(line + "\n" for line in self.export_lines())

    def manifest(self, db: Database | None = None) -> dict:
        return {
            "vertex_types": {
                n: {"kind": t.kind, "count": len(t), **({"attribute": str(t.attribute)} if t.attribute else {})}
                for n, t in sorted(self.vertex_types.items())
            },
            "edge_types": {
                n: {"kind": e.kind, "src": e.src_type, "dst": e.dst_type, "count": len(e)}
                for n, e in sorted(self.edge_sets.items())
            },
            "promotions": [r.to_json(db) for r in self.promotions],
            "fingerprint": self.fingerprint(),
        }


class HeteroGraph(_GraphReads):
    """Typed vertices (payload φ, type τ) and typed directed edges. Never mutated."""

    def __init__(self, vertex_types: Mapping[str, VertexType], edge_sets: Mapping[str, EdgeSet],
                 promotions: Sequence[PromotionRecord] = ()):
        self.vertex_types = dict(vertex_types)
        self.edge_sets = dict(edge_sets)
        self.promotions = tuple(promotions)


class _Layered(Mapping):
    def __init__(self, base: Mapping, extra: Mapping):
        self._base, self._extra = base, extra

    def __getitem__(self, k):
        return self._extra[k] if k in self._extra else self._base[k]

    def __iter__(self):
        yield from self._base
        yield from (k for k in self._extra if k not in self._base)

    def __len__(self):
        return len(self._base) + sum(1 for k in self._extra if k not in self._base)


class GraphView(_GraphReads):
    """A promotion laid over a base graph without copying the base's storage."""

    def __init__(self, base: _GraphReads, vtype: VertexType, edges: EdgeSet, record: PromotionRecord):
        self.base = base
        self.vertex_types = _Layered(base.vertex_types, {vtype.name: vtype})
        self.edge_sets = _Layered(base.edge_sets, {edges.name: edges})
        self.promotions = base.promotions + (record,)

    def materialize(self) -> HeteroGraph:
        return HeteroGraph(dict(self.vertex_types), dict(self.edge_sets), self.promotions)


def build_reg(db: Database) -> HeteroGraph:
    vtypes = {}
    for decl in db.schema.relations:
        kind = "train" if decl.name == TRAIN_RELATION else "relation"
        vtypes[decl.name] = VertexType(decl.name, kind, db.tables[decl.name], relation=decl.name)
    edges = {}
    for link in db.schema.links:
        j = link.position - 1
        index = db.key_index[link.target]
        src, dst = [], []
        for i, row in enumerate(db.tables[link.source]):
            v = row[j]
            if v is not None and v in index:
                src.append(i)
                dst.append(index[v])
        if link.source == TRAIN_RELATION:
            kind, name = "train", f"train:{link.target}"
        else:
            kind, name = "fk", f"fk:{link.source}.{db.relation(link.source).attr_name(link.position)}"
        edges[name] = EdgeSet(name, kind, link.source, link.target,
                              np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64))
    return HeteroGraph(vtypes, edges)


def promoted_type_name(db: Database, attr: AttributeRef) -> str:
    return attr.name(db)


def _promotion_parts(g: _GraphReads, db: Database, attr: AttributeRef, policy: BinPolicy):
    check_eligible(db, attr)
    name = promoted_type_name(db, attr)
    if name in g.vertex_types or attr in g.promoted:
        raise ValidationError(f"attribute {name} is already promoted", "double_promotion", attribute=name)
    values, edges_ = attribute_values(db, attr, policy)
    distinct = sorted({v for v in values if v is not None})
    if not distinct:
        raise ValidationError(f"attribute {name} has no non-missing values", "empty_attribute", attribute=name)
    n_rows = len(values)
    if len(distinct) > 0.5 * n_rows:
        log.warning("promoting high-cardinality attribute %s (%d values over %d rows)", name, len(distinct), n_rows)
    vid = {v: i for i, v in enumerate(distinct)}
    rows = [i for i, v in enumerate(values) if v is not None]
    src = np.asarray([vid[values[i]] for i in rows], dtype=np.int64)
    dst = np.asarray(rows, dtype=np.int64)
    vtype = VertexType(name, "value", tuple(distinct), relation=attr.relation, attribute=attr)
    eset = EdgeSet(f"has:{name}", "promoted", name, attr.relation, src, dst)
    record = PromotionRecord(attr, len(distinct), len(rows), len(g.promotions) + 1, edges_)
    return vtype, eset, record


def promote(g: _GraphReads, db: Database, attr: AttributeRef, policy: BinPolicy = DEFAULT_BINS):
    """Return ``(G^(A), record)``; the input graph is left untouched."""
    vtype, eset, record = _promotion_parts(g, db, attr, policy)
    vtypes = dict(g.vertex_types)
    vtypes[vtype.name] = vtype
    esets = dict(g.edge_sets)
    esets[eset.name] = eset
    return HeteroGraph(vtypes, esets, g.promotions + (record,)), record


def promote_overlay(g: _GraphReads, db: Database, attr: AttributeRef, policy: BinPolicy = DEFAULT_BINS) -> GraphView:
    vtype, eset, record = _promotion_parts(g, db, attr, policy)
    return GraphView(g, vtype, eset, record)


def promote_all(g: _GraphReads, db: Database, attrs: Sequence[AttributeRef], policy: BinPolicy = DEFAULT_BINS):
    for a in attrs:
        g, _ = promote(g, db, a, policy)
    return g
