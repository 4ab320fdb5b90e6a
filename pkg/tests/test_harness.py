import logging

import numpy as np
import pandas as pd
import pytest

from anonloss import harness
from anonloss.baseline import ForestParams
from anonloss.dataset import TabularDataset
from anonloss.harness import (
    OURS,
    OURS_NO_RECALL,
    PRIOR,
    ExperimentPlan,
    ResultRow,
    aggregate_replication,
    classify_and_compare,
    derive_seed,
    generate_known_sets,
    pair_results,
    replication_study,
    run_matrix,
    uniqueness_fraction,
)
from anonloss.synth import make_dataset

FAST = ForestParams(n_trees=15)


def counted_uniqueness(frame, cols):
    sizes = frame.groupby(list(cols)).size()
    return sizes[sizes == 1].sum() / len(frame)


def test_id_column_gives_singletons():
    rng = np.random.default_rng(0)
    ds = TabularDataset(pd.DataFrame({"id": np.arange(100).astype(str), "a": rng.integers(0, 3, 100),
                                      "b": rng.integers(0, 3, 100), "u": rng.integers(0, 2, 100)}))
    sets = generate_known_sets(ds, "u", 3, 0.99, seed=1)
    assert sets[0] == ("id",)
    assert all(uniqueness_fraction(ds, s) >= 0.99 for s in sets)


def test_constant_columns_fall_back(caplog):
    ds = TabularDataset(pd.DataFrame({"a": [1] * 10, "b": ["x"] * 10, "u": [0, 1] * 5}))
    with caplog.at_level(logging.WARNING):
        assert generate_known_sets(ds, "u", 5, 0.9) == [("a", "b")]
    assert "unreachable" in caplog.text


def test_smallest_qualifying_size():
    # c0..c2 are the digits of the row index; the other columns are noise
    rng = np.random.default_rng(2)
    i = np.arange(1000)
    cols = {"c0": i // 100, "c1": (i // 10) % 10, "c2": i % 10}
    for j in range(3, 10):
        cols[f"c{j}"] = rng.integers(0, 10, 1000)
    cols["u"] = rng.integers(0, 3, 1000)
    frame = pd.DataFrame(cols)
    ds = TabularDataset(frame)
    sets = generate_known_sets(ds, "u", 1, 0.9, seed=0)
    assert len(sets[0]) == 3
    assert counted_uniqueness(frame, sets[0]) >= 0.9
    assert max(counted_uniqueness(frame, p) for p in [("c0", "c1"), ("c1", "c2"), ("c0", "c5")]) < 0.9
    assert uniqueness_fraction(ds, sets[0]) == counted_uniqueness(frame, sets[0])


def test_known_sets_need_two_columns():
    with pytest.raises(ValueError):
        generate_known_sets(TabularDataset(pd.DataFrame({"u": [1, 2]})), "u")


def test_derive_seed_stable():
    assert derive_seed(1, "a", 0.2) == derive_seed(1, "a", 0.2)
    assert derive_seed(1, "a", 0.2) != derive_seed(1, "a", 0.8)


def test_plan_validation():
    ds = make_dataset(50)
    with pytest.raises(ValueError):
        ExperimentPlan(datasets=[])
    with pytest.raises(ValueError):
        ExperimentPlan(datasets=[("d", ds)], swap_fractions=(1.5,))
    with pytest.raises(ValueError):
        ExperimentPlan(datasets=[("d", ds)], approaches=("mine",))
    with pytest.raises(ValueError):
        ExperimentPlan(datasets=[("d", ds)], known_sets_per_unknown=0)


def small_plan(**kw):
    ds = make_dataset(300, seed=4)
    args = dict(datasets=[("s", ds)], unknowns={"s": ["condition", "education"]}, swap_fractions=(0.2,),
                known_sets_per_unknown=5, approaches=(OURS, PRIOR), forest=FAST, seed=7)
    args.update(kw)
    return ExperimentPlan(**args)


def test_matrix_cardinality_and_determinism():
    plan = small_plan()
    rows = run_matrix(plan)
    assert len(rows) == 20
    assert {r.approach for r in rows} == {OURS, PRIOR}
    assert all(r.status == "ok" for r in rows)
    again = run_matrix(small_plan(), jobs=2)
    assert again == rows


def test_no_recall_variant_uses_full_recall_measure():
    plan = small_plan(unknowns={"s": ["condition"]}, known_sets_per_unknown=1,
                      approaches=(OURS, OURS_NO_RECALL))
    ours, nor = run_matrix(plan)
    assert nor.approach == OURS_NO_RECALL and nor.key == ours.key
    assert nor.n_measures == 1 and nor.best_recall == 1.0
    # maxima over a subset of the measures
    assert nor.prc_atk <= ours.prc_atk and nor.prc_base <= ours.prc_base


def test_failures_are_recorded(monkeypatch):
    def broken(*a, **k):
        raise RuntimeError("nope")

    monkeypatch.setattr(harness, "run", broken)
    rows = run_matrix(small_plan(unknowns={"s": ["condition"]}, known_sets_per_unknown=1))
    assert [r.status for r in rows] == ["failed", "failed"]
    assert rows[0].error == "nope"


def test_strong_swap_all_safe():
    ds = make_dataset(2000, seed=1)
    plan = ExperimentPlan(datasets=[("s", ds)], unknowns={"s": ["condition"]}, swap_fractions=(0.8,),
                          known_sets_per_unknown=2, approaches=(OURS, PRIOR), forest=FAST)
    rows = run_matrix(plan)
    assert {r.risk_class for r in rows} == {"safe"}


def row(approach, alc, knowns="a", cls=None):
    r = ResultRow("d", 0.2, knowns, "u", approach, alc=alc)
    r.risk_class = cls or ""
    return r


@pytest.mark.parametrize("ours,prior,cell", [
    (0.8, 0.3, ("serious", "safe")),
    (0.45, 0.45, ("safe", "safe")),
    (0.55, 0.55, ("at_risk", "at_risk")),
])
def test_band_lookup(ours, prior, cell):
    cells = classify_and_compare([row(OURS, ours), row(PRIOR, prior)])
    hit = [c for c in cells if c.count]
    assert len(hit) == 1 and (hit[0].ours_class, hit[0].other_class) == cell
    assert hit[0].fraction == 1.0


def test_compare_totals_and_mismatch():
    rows = [row(OURS, 0.8, "a"), row(PRIOR, 0.1, "a"), row(OURS, 0.2, "b"), row(PRIOR, 0.2, "b"),
            row(OURS, 0.6, "c"), row(PRIOR, 0.9, "c")]
    cells = classify_and_compare(rows)
    assert len(cells) == 9
    assert sum(c.count for c in cells) == 3
    assert sum(c.fraction for c in cells) == pytest.approx(1.0)
    assert len(pair_results(rows)) == 3
    with pytest.raises(ValueError, match="configurations differ"):
        classify_and_compare(rows[:-1])


def test_replication_small():
    ds = make_dataset(600, seed=2)
    variants = {"default": ForestParams(n_trees=20, min_split=2, min_leaf=1), "anti": ForestParams(n_trees=20)}
    rows = replication_study(ds, ["job", "condition"], (1, 10), variants, n_nonmembers=100, seed=3)
    # condition has no value rarer than 10% and is skipped
    assert {r.unknown for r in rows} == {"job"}
    assert {(r.variant, r.replicas) for r in rows} == {(v, k) for v in variants for k in (0, 1, 10)}
    assert all(r.error == 0 for r in rows if r.replicas == 0)
    agg = aggregate_replication(rows)
    assert agg[("default", 10)] >= agg[("default", 1)]
