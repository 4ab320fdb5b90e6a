import numpy as np
import pandas as pd
import pytest

from anonloss.attacks import (
    AttackScenario,
    MatchResult,
    PreparedTable,
    best_row_match,
    best_row_match_detail,
    gower_distance,
    known_values,
    prepare_tables,
    prior_mode_baseline,
)
from anonloss.dataset import CATEGORICAL, CONTINUOUS, AnonymizationConfig, TabularDataset, swap_anonymize
from anonloss.session import BASELINE
from oracles import oracle, random_tables


def test_scenario_label_and_validation():
    sc = AttackScenario(("a", "b"), "c")
    assert sc.label == "a+b->c"
    with pytest.raises(ValueError):
        AttackScenario(("a",), "a")
    with pytest.raises(ValueError):
        AttackScenario(("a",), "b", selection_mode="pretargeted")
    ds = TabularDataset(pd.DataFrame({"a": [1], "c": [2]}))
    with pytest.raises(ValueError, match="not in dataset"):
        sc.validate(ds)


def test_gower_examples():
    kinds = {"x": CATEGORICAL, "y": CATEGORICAL, "z": CONTINUOUS}
    assert gower_distance({"x": 1, "y": 2}, {"x": 1, "y": 2}, kinds, ["x", "y"]) == 0.0
    # y absent from the candidate's table counts as a full mismatch
    assert gower_distance({"x": 1, "y": 2}, {"x": 1}, kinds, ["x", "y"]) == 0.5
    assert gower_distance({"z": 30.0}, {"z": 50.0}, kinds, ["z"], {"z": 100.0}) == pytest.approx(0.2)
    # zero range: equality only
    assert gower_distance({"z": 3.0}, {"z": 3.0}, kinds, ["z"], {"z": 0.0}) == 0.0
    assert gower_distance({"z": 3.0}, {"z": 4.0}, kinds, ["z"], {"z": 0.0}) == 1.0
    with pytest.raises(ValueError):
        gower_distance({}, {}, kinds, [])


def test_gower_symmetry_and_identity():
    rng = np.random.default_rng(1)
    kinds = {"a": CATEGORICAL, "b": CONTINUOUS, "c": CATEGORICAL}
    ranges = {"b": 10.0}
    for _ in range(200):
        r1 = {"a": int(rng.integers(3)), "b": float(rng.uniform(0, 10)), "c": int(rng.integers(2))}
        r2 = {"a": int(rng.integers(3)), "b": float(rng.uniform(0, 10)), "c": int(rng.integers(2))}
        d12 = gower_distance(r1, r2, kinds, list(kinds), ranges)
        assert d12 == gower_distance(r2, r1, kinds, list(kinds), ranges)
        assert 0 <= d12 <= 1
        assert (d12 == 0) == (r1 == r2)


def test_rank_score_examples():
    assert MatchResult(0.0, 1, 1, 0).rank_score == 1.0
    assert MatchResult(0.2, 4, 3, 0).rank_score == pytest.approx(0.6)
    assert MatchResult(1.0, 5, 2, 0).rank_score == 0.0


def prepared(frame):
    return PreparedTable(TabularDataset(frame))


def test_best_row_match_tied_rows():
    # four rows at distance 0.2 (one of five knowns off), three share value 7
    frame = pd.DataFrame({
        "k1": [0, 0, 0, 0, 1], "k2": [0, 0, 0, 0, 1], "k3": [0, 0, 0, 0, 1],
        "k4": [0, 0, 0, 0, 1], "k5": [1, 1, 1, 1, 1], "u": [7, 7, 3, 7, 9],
    })
    t = prepared(frame)
    target = {"k1": 0, "k2": 0, "k3": 0, "k4": 0, "k5": 0}
    # target codes must use the table encoding; value 0 of k5 is absent, so use a code no row has
    target["k5"] = 99
    m = best_row_match_detail(target, [t], "u")
    assert (m.g_min, m.C, m.M) == (pytest.approx(0.2), 4, 3)
    label, rank = best_row_match(target, [t], "u")
    assert t.dataset.decode("u", label) == 7
    assert rank == pytest.approx(0.6)


def test_best_row_match_all_equidistant():
    t = prepared(pd.DataFrame({"k": [1, 1, 1], "u": ["a", "b", "a"]}))
    label, rank = best_row_match({"k": 5}, [t], "u")
    assert rank == 0.0
    assert t.dataset.decode("u", label) == "a"


def test_modal_tie_lowest_code():
    t = prepared(pd.DataFrame({"k": [0, 0, 0, 0], "u": ["b", "a", "b", "a"]}))
    label, rank = best_row_match({"k": 0}, [t], "u")
    assert label == 0 and rank == 0.5


def test_abstains_without_qualifying_table():
    t = prepared(pd.DataFrame({"k": [0, 1], "v": [1, 2]}))
    assert best_row_match({"k": 0}, [t], "u") is None
    t2 = prepared(pd.DataFrame({"z": [0, 1], "u": [1, 2]}))
    assert best_row_match({"k": 0}, [t2], "u") is None


def test_missing_known_in_one_table():
    # table A lacks k2, so its best possible distance is 0.5
    orig = TabularDataset(pd.DataFrame({"k1": [0, 1], "k2": [0, 1], "u": [5, 6]}))
    a = pd.DataFrame({"k1": [0], "u": [5]})
    b = pd.DataFrame({"k1": [1], "k2": [0], "u": [6]})
    tables = prepare_tables(orig, [TabularDataset(a), TabularDataset(b)])
    m = best_row_match_detail(known_values(orig, 0, ["k1", "k2"]), tables, "u")
    assert m.g_min == 0.5 and m.C == 2
    assert orig.decode("u", m.predicted_value) == 5


@pytest.mark.parametrize("seed", range(120))
def test_matches_brute_force_oracle(seed):
    rng = np.random.default_rng(seed)
    tables = random_tables(rng)
    known_pool = ["c1", "c2", "x1", "x2"]
    known = list(rng.choice(known_pool, size=int(rng.integers(1, 5)), replace=False))
    target = {"c1": int(rng.integers(0, 3)), "c2": int(rng.integers(0, 4)),
              "x1": float(rng.integers(0, 6)), "x2": float(np.round(rng.uniform(0, 50), 1))}
    target = {k: target[k] for k in known}
    got = best_row_match_detail(target, [t for t, _ in tables], "u", known)
    want = oracle(target, [raw for _, raw in tables], known, "u")
    if want is None:
        assert got is None
    else:
        assert (got.g_min, got.C, got.M, got.predicted_value) == want


@pytest.mark.parametrize("seed", range(20))
def test_row_permutation_invariance(seed):
    rng = np.random.default_rng(1000 + seed)
    n = 150
    frame = pd.DataFrame({"a": rng.integers(0, 3, n), "x": rng.uniform(0, 10, n).round(0),
                          "u": rng.integers(0, 4, n)})
    t1 = prepared(frame)
    t2 = PreparedTable(t1.dataset.with_frame(frame.sample(frac=1.0, random_state=seed)))
    target = {"a": t1.dataset.encode("a", int(rng.integers(0, 3))), "x": float(rng.integers(0, 10))}
    assert best_row_match(target, [t1], "u") == best_row_match(target, [t2], "u")


def test_rank_score_bounds():
    rng = np.random.default_rng(5)
    for _ in range(50):
        frame = pd.DataFrame({"a": rng.integers(0, 3, 30), "u": rng.integers(0, 3, 30)})
        t = prepared(frame)
        m = best_row_match_detail({"a": int(rng.integers(0, 4))}, [t], "u")
        assert 0.0 <= m.rank_score <= 1.0
        assert (m.rank_score == 1.0) == (m.g_min == 0 and m.M == m.C)


def test_prepare_tables_encodes_against_original():
    orig = TabularDataset(pd.DataFrame({"c": ["x", "y", "z"], "u": [1, 2, 3]}))
    anon = TabularDataset(pd.DataFrame({"c": ["z", "y"], "u": [3, 2]}))
    (t,) = prepare_tables(orig, [anon])
    target = known_values(orig, 2, ["c"])  # "z"
    label, rank = best_row_match(target, [t], "u")
    assert orig.decode("u", label) == 3 and rank == 1.0


def identity_builder(ds, seed):
    return ds


def test_prior_mode_baseline_identity_unique_rows():
    n = 60
    orig = TabularDataset(pd.DataFrame({"k": np.arange(n) % 20, "j": np.arange(n) // 20,
                                        "u": np.random.default_rng(2).integers(0, 5, n)}))
    sc = AttackScenario(("k", "j"), "u")
    ledger = prior_mode_baseline(sc, orig, identity_builder, list(range(n)))
    assert len(ledger) == n
    assert all(r.ledger == BASELINE and r.rank_score == 1.0 for r in ledger)
    # the target is gone, so the identity release cannot reveal it
    truth = orig.labels("u")
    assert sum(r.correct for r in ledger) < n
    assert [r.true_value for r in ledger] == list(truth)
    with pytest.raises(ValueError, match="empty target"):
        prior_mode_baseline(sc, orig, identity_builder, [])


def test_prior_mode_baseline_full_swap_is_marginal_guess():
    rng = np.random.default_rng(0)
    n = 400
    u = rng.choice([0, 1, 2], size=n, p=[0.6, 0.3, 0.1])
    orig = TabularDataset(pd.DataFrame({"k": rng.integers(0, 400, n), "u": u}))
    sc = AttackScenario(("k",), "u")

    def swap_all(ds, seed):
        return swap_anonymize(ds, AnonymizationConfig(1.0, seed))

    ledger = prior_mode_baseline(sc, orig, swap_all, list(range(0, n, 2)))
    precision = np.mean([r.correct for r in ledger])
    # random match against the marginal: sum of squared frequencies
    freqs = np.bincount(u) / n
    assert precision == pytest.approx(float((freqs ** 2).sum()), abs=0.1)
