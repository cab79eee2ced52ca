import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from radtag.corpus import CLASSES, TagGrid
from radtag.evalkit import (Counts, FoldPlan, cross_validate, entity_negation_flags, negation_entity_metrics,
                            token_overlap_metrics, write_report)


def grid(*columns):
    """Grid from per-channel tag strings, missing channels all O."""
    n = len(columns[0])
    cols = [list(c) for c in columns] + [["O"] * n] * (5 - len(columns))
    return TagGrid.from_strings([list(row) for row in zip(*cols)])


def test_identical_is_perfect():
    g = grid("BES", "OSO", "OOO", "SOO")
    r = token_overlap_metrics([g], [g])
    assert r.total.f1 == 1.0
    assert r.classes["ClinicalFinding"].f1 == 1.0


def test_all_o_prediction():
    r = token_overlap_metrics([grid("BES")], [grid("OOO")])
    assert (r.total.precision, r.total.recall, r.total.f1) == (0.0, 0.0, 0.0)


def test_hand_count():
    r = token_overlap_metrics([grid("BOE")], [grid("SOO")])
    c = r.classes["BodyLocation"]
    assert (c.tp, c.fp, c.fn) == (1, 0, 1)
    assert c.precision == 1.0 and c.recall == 0.5 and c.f1 == pytest.approx(2 / 3)


def test_negation_channel_excluded_from_totals():
    g = grid("OO", "OO", "OO", "OO", "SO")
    r = token_overlap_metrics([g], [grid("OO")])
    assert r.total == Counts() and "Negation" not in r.classes


def test_misaligned():
    with pytest.raises(ValueError):
        token_overlap_metrics([grid("O")], [])
    with pytest.raises(ValueError):
        token_overlap_metrics([grid("O")], [grid("OO")])


tag = st.sampled_from("IOBES")
grids = st.integers(1, 6).flatmap(lambda n: st.lists(st.text("IOBES", min_size=n, max_size=n), min_size=5, max_size=5))


@given(st.lists(st.tuples(grids, grids).filter(lambda ab: len(ab[0][0]) == len(ab[1][0])), min_size=1, max_size=4))
def test_swap_symmetry_and_micro_total(pairs):
    gold = [grid(*a) for a, _ in pairs]
    pred = [grid(*b) for _, b in pairs]
    fwd, back = token_overlap_metrics(gold, pred), token_overlap_metrics(pred, gold)
    for name in CLASSES:
        assert fwd.classes[name].precision == back.classes[name].recall
    assert fwd.total.tp == sum(fwd.classes[n].tp for n in CLASSES)


def test_negation_metrics_examples():
    gold = {i: i < 4 for i in range(10)}
    assert negation_entity_metrics(gold, gold).total.f1 == 1.0
    r = negation_entity_metrics(gold, {i: False for i in range(10)}).total
    assert (r.precision, r.recall, r.f1) == (0, 0, 0)
    gold = {"a": True, "b": True, "c": True, "d": False}
    r = negation_entity_metrics(gold, {"a": True, "b": True, "d": True}).total
    assert r.precision == pytest.approx(2 / 3) and r.recall == pytest.approx(2 / 3) and r.f1 == pytest.approx(2 / 3)


def test_negation_unknown_entity_is_fp(caplog):
    r = negation_entity_metrics({"a": True}, {"a": True, "zz": True}).total
    assert (r.tp, r.fp) == (1, 1)
    assert "absent from the gold" in caplog.text


def test_entity_negation_flags():
    g = grid("BEO", "OOS", "OOO", "OOO", "SOO")
    flags = entity_negation_flags(g, "s1")
    assert flags == {("s1", "BodyLocation", (0, 1)): True, ("s1", "ClinicalFinding", (2,)): False}
    pred = grid("OOO", "OOO", "OOO", "OOO", "OOS")
    assert entity_negation_flags(pred, "s1", entities_from=g)[("s1", "ClinicalFinding", (2,))] is True


def test_fold_plan_partition():
    docs = [f"d{i}" for i in range(10)]
    plan = FoldPlan.make(docs, 5, seed=3)
    assert [len(f) for f in plan.folds] == [2] * 5
    assert sorted(d for f in plan.folds for d in f) == sorted(docs)
    assert FoldPlan.make(docs, 5, seed=3).folds == plan.folds
    for _, train, test in plan.splits():
        assert not set(train) & set(test) and len(train) + len(test) == 10


@given(st.integers(2, 40), st.integers(2, 7), st.integers(0, 100))
def test_fold_sizes_balanced(n, k, seed):
    if n < k:
        with pytest.raises(ValueError):
            FoldPlan.make(list(range(n)), k, seed)
        return
    sizes = [len(f) for f in FoldPlan.make(list(range(n)), k, seed).folds]
    assert max(sizes) - min(sizes) <= 1 and sum(sizes) == n


def test_fold_plan_rejects_k1():
    with pytest.raises(ValueError):
        FoldPlan.make([1, 2, 3], 1)


def test_cross_validate_mean_and_coverage(tmp_path):
    docs = list(range(10))
    seen = []

    def evaluate(model, test):
        seen.extend(test)
        # a deterministic but fold-dependent score
        tp = sum(test)
        return token_overlap_metrics([grid("S" * (tp + 1))], [grid("S" * (tp + 1))]) if tp % 2 else \
            token_overlap_metrics([grid("SS")], [grid("SO")])

    res = cross_validate(docs, 5, 1, lambda train: None, evaluate)
    assert sorted(seen) == docs
    assert res.mean["total"]["f1"] == pytest.approx(np.mean([r.total.f1 for r in res.folds]))
    assert res.pooled.total.tp == sum(r.total.tp for r in res.folds)
    assert [r.fold for r in res.folds] == list(range(5))
    write_report(tmp_path / "r.json", res)
    data = json.loads((tmp_path / "r.json").read_text())
    assert len(data["folds"]) == 5 and data["seed"] == 1


def test_cross_validate_duplicate_keys():
    with pytest.raises(ValueError):
        cross_validate([1, 1, 2], 2, 0, lambda t: None, lambda m, t: None)
