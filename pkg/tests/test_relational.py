import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from augraph.errors import SchemaSyntaxError, ValidationError
from augraph.relational import (TRAIN_RELATION, TaskSpec, attach_task, extract_label_column, joined_value_counts,
                                load_database, load_task, parse_schema)
from augraph.synth import SynthConfig, generate

SHOP = """
# two tables
relation customer(cid:key, name:cat)
relation order(oid:key, cid:fk(customer), amount:float?)
"""
CUSTOMERS = "cid,name\nc1,ann\nc2,bob\n"
ORDERS = "oid,cid,amount\no1,c1,3.5\no2,c1,\no3,c2,1.0\n"


def shop_db():
    return load_database(parse_schema(SHOP), {"customer": CUSTOMERS, "order": ORDERS})


class TestParseSchema:
    def test_minimal_two_table(self):
        s = parse_schema(SHOP)
        assert s.names == ["customer", "order"]
        assert len(s.links) == 1
        link = s.links[0]
        assert (link.source, link.position, link.target) == ("order", 2, "customer")

    def test_dangling_target(self):
        with pytest.raises(ValidationError, match="nonexistent"):
            parse_schema("relation a(x:key)\nrelation b(y:key, z:fk(nonexistent))")

    def test_fk_at_position_one(self):
        with pytest.raises(ValidationError):
            parse_schema("relation a(x:key)\nrelation b(y:fk(a), z:cat)")

    def test_duplicate_relation(self):
        with pytest.raises(ValidationError, match="duplicate"):
            parse_schema("relation a(x:key)\nrelation a(y:key)")

    def test_syntax_error_has_position(self):
        with pytest.raises(SchemaSyntaxError) as info:
            parse_schema("relation a(x:key, y:cat\nrelation b(z:key)")
        assert info.value.line == 2 and info.value.column == 1

    def test_reserved_name(self):
        with pytest.raises(ValidationError):
            parse_schema(f"relation {TRAIN_RELATION}(x:key)")

    def test_synth_schema_round_trip(self):
        ds = generate(SynthConfig(n_target=50, n_parent=10, seed=3))
        s = parse_schema(ds.schema_text)
        assert len(s.relations) == 3 and len(s.links) == 2
        assert parse_schema(s.to_text()) == s

    @given(st.lists(st.sampled_from(["cat", "int", "float", "cat?", "int?", "float?"]), min_size=0, max_size=6))
    def test_to_text_round_trip(self, kinds):
        attrs = ", ".join(["k:key"] + [f"a{i}:{k}" for i, k in enumerate(kinds)])
        s = parse_schema(f"relation r({attrs})\nrelation q(qk:key, rk:fk(r))")
        assert parse_schema(s.to_text()) == s


class TestLoadDatabase:
    def test_ok(self):
        db = shop_db()
        assert len(db.tables["order"]) == 3
        assert db.tables["order"][1][2] is None

    def test_referential_integrity(self):
        with pytest.raises(ValidationError, match=r"\(order, 2, customer\)"):
            load_database(parse_schema(SHOP), {"customer": CUSTOMERS, "order": "oid,cid,amount\no1,c9,1\n"})

    def test_lenient_blanks_dangling(self):
        db = load_database(parse_schema(SHOP), {"customer": CUSTOMERS, "order": "oid,cid,amount\no1,c9,1\n"},
                           strict_fk=False)
        assert db.tables["order"][0][1] is None

    def test_duplicate_key(self):
        with pytest.raises(ValidationError, match="c1"):
            load_database(parse_schema(SHOP), {"customer": "cid,name\nc1,a\nc1,b\n", "order": "oid,cid,amount\n"})

    def test_arity_mismatch(self):
        with pytest.raises(ValidationError):
            load_database(parse_schema(SHOP), {"customer": "cid,name\nc1\n", "order": "oid,cid,amount\n"})

    def test_missing_not_allowed(self):
        with pytest.raises(ValidationError):
            load_database(parse_schema(SHOP), {"customer": "cid,name\nc1,\n", "order": "oid,cid,amount\n"})

    def test_unparseable(self):
        with pytest.raises(ValidationError):
            load_database(parse_schema(SHOP), {"customer": CUSTOMERS, "order": "oid,cid,amount\no1,c1,abc\n"})

    def test_header_mismatch(self):
        with pytest.raises(ValidationError):
            load_database(parse_schema(SHOP), {"customer": "id,name\nc1,a\n", "order": "oid,cid,amount\n"})

    def test_whitespace_trimmed(self):
        db = load_database(parse_schema(SHOP), {"customer": CUSTOMERS, "order": "oid,cid,amount\no1, c1 ,1\n"})
        assert db.tables["order"][0][1] == "c1"

    def test_single_table(self):
        db = load_database(parse_schema("relation t(k:key, a:cat)"), {"t": "k,a\nx,1\ny,2\n"})
        assert db.schema.links == ()

    def test_synth_row_count(self):
        ds = generate(SynthConfig(n_target=1000, seed=1))
        assert len(ds.database().tables["transactions"]) == 1000

    def test_key_constraints_hold(self, synth0):
        _, db = synth0
        for rel in db.schema.relations:
            keys = [r[0] for r in db.tables[rel.name]]
            assert len(set(keys)) == len(keys)
        for link in db.schema.links:
            targets = {r[0] for r in db.tables[link.target]}
            assert all(r[link.position - 1] in targets for r in db.tables[link.source])


class TestTask:
    def task(self, splits):
        keys = ["c1", "c2"]
        return TaskSpec("customer", dict(zip(keys, ["0", "1"])), dict(zip(keys, splits)))

    def test_attach_adds_train_relation(self):
        db = attach_task(shop_db(), self.task(["train", "train"]))
        assert len(db.tables[TRAIN_RELATION]) == 2
        link = db.schema.links[-1]
        assert (link.source, link.position, link.target) == (TRAIN_RELATION, 1, "customer")

    def test_only_train_keys(self):
        db = attach_task(shop_db(), self.task(["train", "val"]))
        assert [r[0] for r in db.tables[TRAIN_RELATION]] == ["c1"]
        assert list(db.split_rows("val")) == [1]

    def test_empty_train(self):
        with pytest.raises(ValidationError, match="empty training set"):
            attach_task(shop_db(), self.task(["val", "test"]))

    def test_twice_errors(self):
        db = attach_task(shop_db(), self.task(["train", "val"]))
        with pytest.raises(ValidationError):
            attach_task(db, self.task(["train", "val"]))

    def test_unknown_key(self):
        with pytest.raises(ValidationError, match="c7"):
            attach_task(shop_db(), TaskSpec("customer", {"c7": "0"}, {"c7": "train"}))

    def test_bad_split(self):
        with pytest.raises(ValidationError):
            load_task("key,label,split\nc1,0,holdout\n", "customer")

    def test_synth_split_sizes(self):
        ds = generate(SynthConfig(n_target=1000, seed=2))
        db = ds.database()
        assert len(db.tables[TRAIN_RELATION]) == 700
        assert len(db.split_rows("val")) == 150 and len(db.split_rows("test")) == 150

    def test_label_column_extracted(self):
        schema = parse_schema("relation t(k:key, a:cat, y:cat)")
        src = {"t": "k,a,y\n" + "".join(f"r{i},{i % 3},{i % 2}\n" for i in range(20))}
        schema2, src2, task = extract_label_column(schema, src, "t", "y", split_seed=0)
        assert schema2.relation("t").attr_names == ("k", "a")
        assert len(task.labels) == 20
        db = attach_task(load_database(schema2, src2), task)
        assert db.relation("t").arity == 2


class TestJoin:
    def test_child_to_parent_multiplicity(self):
        db = attach_task(shop_db(), TaskSpec("customer", {"c1": "0", "c2": "1"}, {"c1": "train", "c2": "train"}))
        amounts = db.column("order", 3)
        counts = joined_value_counts(db, "order", amounts)
        assert counts == [{3.5: 1}, {1.0: 1}]

    def test_parent_values_repeat_for_children(self):
        task = TaskSpec("order", {"o1": "0", "o2": "1", "o3": "1"}, {"o1": "train", "o2": "train", "o3": "train"})
        db = attach_task(shop_db(), task)
        counts = joined_value_counts(db, "customer", db.column("customer", 2))
        assert counts == [{"ann": 1}, {"ann": 1}, {"bob": 1}]

    def test_unreachable(self):
        schema = parse_schema("relation a(x:key, p:cat)\nrelation b(y:key, q:cat)")
        db = load_database(schema, {"a": "x,p\n1,u\n", "b": "y,q\n2,v\n"})
        db = attach_task(db, TaskSpec("a", {"1": "0"}, {"1": "train"}))
        with pytest.raises(ValidationError, match="not reachable"):
            joined_value_counts(db, "b", db.column("b", 2))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_row_counts_match_materialized_join(self, seed):
        from helpers import random_db, ref_join_rows

        db = random_db(np.random.default_rng(seed), max_rows=12, three_tables=seed % 2 == 0)
        target = db.task.target
        ones = [1] * len(db.tables[target])
        counts = joined_value_counts(db, target, ones)
        rows = ref_join_rows(db, target)
        train = db.split_rows("train")
        assert sum(counts[i].get(1, 0) for i in train) == len(rows)
