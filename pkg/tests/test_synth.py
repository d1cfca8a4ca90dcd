import json

import numpy as np
import pytest

from augraph.errors import ValidationError
from augraph.graph import AttributeRef, attribute_values, candidate_pool
from augraph.scoring import score_mi
from augraph.synth import SynthConfig, decision_rule_accuracy, generate
from conftest import synth

SEEDS = range(5)


def gt_refs(ds, db):
    out = []
    for gt in ds.ground_truth:
        rel, name = gt.split(".")
        out.append(AttributeRef(rel, db.relation(rel).position(name)))
    return out


def test_byte_identical(tmp_path):
    a = generate(SynthConfig(n_target=300, seed=4)).write(tmp_path / "a")
    b = generate(SynthConfig(n_target=300, seed=4)).write(tmp_path / "b")
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_seeds_differ():
    assert generate(SynthConfig(n_target=100, seed=0)).tables != generate(SynthConfig(n_target=100, seed=1)).tables


@pytest.mark.parametrize("seed", SEEDS)
def test_class_balance(seed):
    _, db = synth(seed)
    assert 0.35 <= db.label_vector().mean() <= 0.65


@pytest.mark.parametrize("tabular", [False, True])
def test_noiseless_rule_is_exact(tabular):
    cfg = SynthConfig(label_noise=0.0, seed=2, tabular=tabular)
    assert decision_rule_accuracy(generate(cfg), cfg) == 1.0


def test_default_rule_near_noise_ceiling():
    cfg = SynthConfig(seed=0)
    assert 0.92 <= decision_rule_accuracy(generate(cfg), cfg) <= 0.98


def test_signal_mi_exceeds_noise():
    wins = 0
    for seed in SEEDS:
        ds, db = synth(seed)
        gts = set(gt_refs(ds, db))
        scores = {a: score_mi(db, a).score for a in candidate_pool(db)}
        wins += min(scores[a] for a in gts) > max(s for a, s in scores.items() if a not in gts)
    assert wins >= 4


@pytest.mark.parametrize("seed", SEEDS)
def test_signals_span_two_relations(seed):
    ds, _ = synth(seed)
    assert len({gt.split(".")[0] for gt in ds.ground_truth}) >= 2
    assert all(not gt.startswith("transactions.") for gt in ds.ground_truth)


def test_tabular_layout():
    ds, db = synth(0, tabular=True)
    assert db.schema.names[:1] == ["records"] and db.schema.links[0].source == "_train"
    assert all(gt.startswith("records.") for gt in ds.ground_truth)
    assert len(candidate_pool(db)) == 3 + 5


def test_redundant_third_copies_first():
    ds, db = synth(0, redundant_third=True)
    a, _, c = gt_refs(ds, db)
    assert attribute_values(db, a)[0] == attribute_values(db, c)[0]


def test_ground_truth_file():
    ds, _ = synth(0)
    blob = json.loads(ds.ground_truth_json())
    assert blob == {"target": "transactions", "attributes": ds.ground_truth}


def test_float_noise_column_binned():
    _, db = synth(0)
    floats = [a for a in candidate_pool(db) if db.relation(a.relation).attr_type(a.position).kind == "float"]
    assert len(floats) == 1
    vals, edges = attribute_values(db, floats[0])
    assert len(set(vals)) == 8 and len(edges) == 7


@pytest.mark.parametrize("kw", [dict(split=(0.5, 0.5, 0.5)), dict(label_noise=1.0), dict(cardinality=1),
                                dict(n_target=0)])
def test_bad_config(kw):
    with pytest.raises(ValidationError):
        SynthConfig(**kw)


def test_label_vector_matches_task():
    ds, db = synth(0)
    y = db.label_vector()
    assert np.isin(y, [0, 1]).all() and len(y) == 2000


@pytest.mark.parametrize("seed", SEEDS)
def test_noiseless_mi_ranks_signals_first(seed):
    ds, db = synth(seed, label_noise=0.0)
    ranked = sorted(candidate_pool(db), key=lambda a: -score_mi(db, a).score)
    assert set(ranked[:3]) == set(gt_refs(ds, db))
