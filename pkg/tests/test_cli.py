import csv
import json
from collections import Counter

import numpy as np
import pandas as pd
import pytest

from anonloss.cli import PAIR_FIELDS, main, write_comparison
from anonloss.harness import OURS, PRIOR, ResultRow
from anonloss.report import read_csv


@pytest.fixture
def functional_csv(tmp_path):
    rng = np.random.default_rng(0)
    k1, k2 = np.meshgrid(np.arange(50), np.arange(40), indexing="ij")
    k1, k2 = k1.ravel(), k2.ravel()
    frame = pd.DataFrame({"k1": [f"a{v}" for v in k1], "k2": [f"b{v}" for v in k2],
                          "noise": [f"n{v}" for v in rng.integers(0, 3, len(k1))],
                          "u": [f"u{v}" for v in (3 * k1 + k2) % 5]})
    path = tmp_path / "orig.csv"
    frame.to_csv(path, index=False)
    return path


def write_config(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc), encoding="utf-8")
    return p


def test_measure_artifacts(tmp_path, functional_csv):
    cfg = write_config(tmp_path, {
        "original": functional_csv.name, "anonymized": [functional_csv.name], "n_trees": 20,
        "scenarios": [{"known": ["k1", "k2"], "unknown": "u", "label": "leaky"},
                      {"known": ["noise"], "unknown": "u", "label": "blind"}],
    })
    out = tmp_path / "out"
    assert main(["measure", "--config", str(cfg), "--out", str(out)]) == 0
    for f in ("predictions.csv", "measures.csv", "results.json", "summary.txt"):
        assert (out / f).exists()
    doc = json.loads((out / "results.json").read_text())
    by_label = {s["label"]: s for s in doc["scenarios"]}
    for s in doc["scenarios"]:
        assert -1 <= s["result"]["alc_rel"] <= 1
    assert by_label["leaky"]["result"]["halt_reason"] == "early_compromised"
    assert by_label["leaky"]["risk_class"] == "serious"
    assert by_label["blind"]["result"]["alc_rel"] < 0.5
    summary = (out / "summary.txt").read_text()
    assert "flagged for examination (ALC >= 0.5): 1" in summary and "  - leaky" in summary
    preds = read_csv(out / "predictions.csv")
    counts = Counter((r["scenario"], r["ledger"]) for r in preds)
    assert counts[("leaky", "attack")] == counts[("leaky", "baseline")]
    measures = read_csv(out / "measures.csv")
    assert {m["ledger"] for m in measures} == {"attack", "baseline"}


def test_measure_missing_key(tmp_path, functional_csv, capsys):
    cfg = write_config(tmp_path, {"original": functional_csv.name,
                                  "scenarios": [{"known": ["k1"], "unknown": "u"}]})
    assert main(["measure", "--config", str(cfg), "--out", str(tmp_path / "o")]) != 0
    assert "anonymized" in capsys.readouterr().err


def test_measure_unknown_key(tmp_path, functional_csv, capsys):
    cfg = write_config(tmp_path, {"original": functional_csv.name, "anonymized": [functional_csv.name],
                                  "scenarios": [{"known": ["k1"], "unknown": "u"}], "alhpa": 2})
    assert main(["measure", "--config", str(cfg)]) == 2
    assert "alhpa" in capsys.readouterr().err


def test_measure_bad_column(tmp_path, functional_csv, capsys):
    cfg = write_config(tmp_path, {"original": functional_csv.name, "anonymized": [functional_csv.name],
                                  "scenarios": [{"known": ["zzz"], "unknown": "u"}]})
    assert main(["measure", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "zzz" in capsys.readouterr().err


def column_multisets(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [sorted(col) for col in zip(*rows[1:])], rows


def test_anonymize(tmp_path, functional_csv):
    out0 = tmp_path / "a0.csv"
    assert main(["anonymize", str(functional_csv), "--swap-fraction", "0", "--output", str(out0)]) == 0
    assert out0.read_bytes() == functional_csv.read_bytes()
    out8 = tmp_path / "a8.csv"
    again = tmp_path / "a8b.csv"
    for o in (out8, again):
        assert main(["anonymize", str(functional_csv), "--swap-fraction", "0.8", "--seed", "3",
                     "--output", str(o)]) == 0
    assert out8.read_bytes() == again.read_bytes()
    h0, m0, rows0 = column_multisets(functional_csv)
    h8, m8, rows8 = column_multisets(out8)
    assert h0 == h8 and m0 == m8
    assert rows0 != rows8


def test_anonymize_bad_fraction(tmp_path, functional_csv):
    assert main(["anonymize", str(functional_csv), "--swap-fraction", "2", "--output",
                 str(tmp_path / "x.csv")]) == 1


def test_curves(tmp_path):
    out = tmp_path / "c"
    assert main(["curves", "--out", str(out), "--prc-iso", "0.5", "--alc-iso", "0,0.5", "--points", "200"]) == 0
    rows = read_csv(out / "curves.csv")
    prc_rows = [r for r in rows if r["curve"] == "prc"]
    assert any(float(r["recall"]) == 1.0 and float(r["precision"]) == 0.5 for r in prc_rows)
    alc = [r for r in rows if r["curve"] == "alc"]
    half = {float(r["prc_base"]): float(r["prc_atk"]) for r in alc if float(r["iso_value"]) == 0.5}
    assert half[0.5] == pytest.approx(0.75)
    zero = [r for r in alc if float(r["iso_value"]) == 0.0]
    assert all(r["prc_base"] == r["prc_atk"] for r in zero)


def test_curves_bad_iso(tmp_path, capsys):
    assert main(["curves", "--out", str(tmp_path), "--prc-iso", "1.2"]) == 1
    assert "iso" in capsys.readouterr().err


def compare_config(tmp_path, **extra):
    doc = {"datasets": [{"name": "syn", "synthetic": {"rows": 400, "seed": 1}, "unknowns": ["condition"]}],
           "swap_fractions": [0.2, 0.8], "known_sets_per_unknown": 3, "approaches": ["ours", "prior"],
           "n_trees": 15}
    doc.update(extra)
    return write_config(tmp_path, doc, "compare.json")


def test_compare_pairs(tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(compare_config(tmp_path)), "--out", str(out)]) == 0
    pairs = read_csv(out / "comparison.csv")
    assert len(pairs) == 6
    assert {p["other_approach"] for p in pairs} == {"prior"}
    table = read_csv(out / "disagreement.csv")
    assert len(table) == 9
    assert sum(int(r["prior_count"]) for r in table) == 6
    assert len(read_csv(out / "results.csv")) == 12
    assert len(read_csv(out / "scatter.csv")) == 6


def test_compare_clipping(tmp_path):
    rows = [ResultRow("d", 0.2, "a", "u", OURS, alc=-0.6, risk_class="safe", best_recall=1.0),
            ResultRow("d", 0.2, "a", "u", PRIOR, alc=0.1, risk_class="safe")]
    write_comparison(tmp_path, rows, (OURS, PRIOR))
    (raw,) = read_csv(tmp_path / "comparison.csv")
    (plot,) = read_csv(tmp_path / "scatter.csv")
    assert float(raw["ours_alc"]) == -0.6
    assert float(plot["ours_alc"]) == -0.2
    assert float(plot["other_alc"]) == 0.1
    assert list(raw) == PAIR_FIELDS


def test_compare_empty_plan(tmp_path, capsys):
    cfg = write_config(tmp_path, {"datasets": []}, "empty.json")
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path / "o")]) != 0
    assert "datasets" in capsys.readouterr().err


def test_compare_needs_ours(tmp_path):
    cfg = compare_config(tmp_path, approaches=["prior"])
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_replication_command(tmp_path):
    cfg = write_config(tmp_path, {"dataset": {"name": "syn", "synthetic": {"rows": 400}}, "unknowns": ["job"],
                                  "replication_counts": [0, 1], "n_nonmembers": 50, "n_trees": 20},
                       "rep.json")
    out = tmp_path / "rep"
    assert main(["replication-study", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_csv(out / "replication.csv")
    assert {r["variant"] for r in rows} == {"default", "anti_overfit"}
    assert len(read_csv(out / "replication_summary.csv")) == 4


def test_missing_config_flag(capsys):
    assert main(["measure"]) == 2
    assert "--config" in capsys.readouterr().err
