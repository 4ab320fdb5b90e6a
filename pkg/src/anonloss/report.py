"""Persisted artifacts: prediction and measure tables, results documents,
the plain-text risk summary and curve data for external plotting."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .metrics import AT_RISK_ALC, PrcParams, PrecisionRecallMeasure, risk_class

PLOT_ALC_FLOOR = -0.2

MEASURE_FIELDS = ["scenario", "ledger", "threshold", "T", "F", "A", "p_meas", "p_lower", "p_upper",
                  "p_prob", "recall", "prc"]
PREDICTION_FIELDS = ["scenario", "target_id", "ledger", "kind", "fallback", "correct", "rank_score",
                     "predicted_value", "true_value"]


def write_csv(path: str | Path, fieldnames: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if row.get(k) is None else row.get(k) for k in fieldnames})


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def measure_rows(scenario: str, ledger: str, measures: Iterable[PrecisionRecallMeasure]) -> list[dict]:
    return [
        {"scenario": scenario, "ledger": ledger, "threshold": m.threshold, "T": m.counts.T, "F": m.counts.F,
         "A": m.counts.A, "p_meas": m.p_meas, "p_lower": m.p_lower, "p_upper": m.p_upper,
         "p_prob": m.p_prob, "recall": m.recall, "prc": m.prc}
        for m in measures
    ]


def write_json(path: str | Path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")


# -- summary ---------------------------------------------------------------


@dataclass
class ScenarioSummary:
    label: str
    alc: float | None
    risk_class: str
    prc_atk: float | None
    prc_base: float | None
    best_precision: float | None
    best_recall: float | None
    n_attempts: int
    n_predictions: int
    halt_reason: str


@dataclass
class SummaryReport:
    scenarios: list[ScenarioSummary] = field(default_factory=list)

    @property
    def flagged(self) -> list[str]:
        return [s.label for s in self.scenarios if s.alc is not None and s.alc >= AT_RISK_ALC]

    @classmethod
    def from_results(cls, doc: dict) -> "SummaryReport":
        """Build from a parsed ``results.json`` document, nothing else."""
        out = cls()
        for entry in doc["scenarios"]:
            res = entry["result"]
            atk = res["atk_measures"]
            best = max(atk, key=lambda m: m["prc"]) if atk else None
            attempts = atk[0]["counts"] if atk else None
            full = max(atk, key=lambda m: m["recall"]) if atk else None
            out.scenarios.append(ScenarioSummary(
                label=entry["label"],
                alc=res["alc_rel"],
                risk_class=risk_class(res["alc_rel"]),
                prc_atk=res["prc_atk"],
                prc_base=res["prc_base"],
                best_precision=best["p_prob"] if best else None,
                best_recall=best["recall"] if best else None,
                n_attempts=sum(attempts.values()) if attempts else 0,
                n_predictions=(full["counts"]["T"] + full["counts"]["F"]) if full else 0,
                halt_reason=res["halt_reason"],
            ))
        return out

    def render(self) -> str:
        def fmt(x) -> str:
            return "n/a" if x is None else f"{x:.4f}"

        lines = ["Anonymity loss summary", "======================", ""]
        for s in self.scenarios:
            lines += [
                f"scenario: {s.label}",
                f"  ALC: {fmt(s.alc)} ({s.risk_class})",
                f"  PRC attack: {fmt(s.prc_atk)}  PRC baseline: {fmt(s.prc_base)}",
                f"  best attack measure: precision {fmt(s.best_precision)} at recall {fmt(s.best_recall)}",
                f"  attempts: {s.n_attempts}  predictions: {s.n_predictions}  halt: {s.halt_reason}",
                "",
            ]
        flagged = self.flagged
        lines.append(f"flagged for examination (ALC >= {AT_RISK_ALC}): {len(flagged)}")
        lines += [f"  - {label}" for label in flagged]
        return "\n".join(lines) + "\n"


# -- curves ----------------------------------------------------------------


def prc_iso_curve(iso: float, params: PrcParams = PrcParams(), points: int = 200) -> list[tuple[float, float]]:
    """(precision, recall) pairs sharing PRC ``iso``; recall runs up to 1."""
    if not 0.0 < iso < 1.0:
        raise ValueError("PRC iso-value must lie in (0, 1)")
    lo = math.log10(params.r_min)
    out = []
    for r in np.logspace(lo, 0.0, points)[1:]:
        r = float(r)
        factor = 1.0 - (math.log10(r) / lo) ** params.alpha
        if factor <= 0:
            continue
        p = iso / factor
        if p <= 1.0:
            out.append((p, r))
    return out


def alc_iso_curve(iso: float, points: int = 200) -> list[tuple[float, float]]:
    """(prc_base, prc_atk) pairs sharing relative ALC ``iso``."""
    if not 0.0 <= iso < 1.0:
        raise ValueError("ALC iso-value must lie in [0, 1)")
    return [(float(b), iso + (1.0 - iso) * float(b)) for b in np.linspace(0.0, 1.0, points + 1)[:-1]]


def curve_rows(prc_isos: Sequence[float], alc_isos: Sequence[float], params: PrcParams,
               points: int = 200) -> list[dict]:
    rows = []
    for iso in prc_isos:
        rows += [{"curve": "prc", "iso_value": iso, "precision": p, "recall": r}
                 for p, r in prc_iso_curve(iso, params, points)]
    for iso in alc_isos:
        rows += [{"curve": "alc", "iso_value": iso, "prc_base": b, "prc_atk": a}
                 for b, a in alc_iso_curve(iso, points)]
    return rows


CURVE_FIELDS = ["curve", "iso_value", "precision", "recall", "prc_base", "prc_atk"]


def clip_for_plot(alc: float | None) -> float | None:
    if alc is None:
        return None
    return max(alc, PLOT_ALC_FLOOR)
