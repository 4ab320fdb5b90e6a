"""Measurement loop: attack and baseline ledgers, threshold sweeps, halting
and the final ALC.

Typical use mirrors a manager object driven by the caller's attack::

    session = MeasurementSession(orig, [anon], scenario)
    for target in session.targets():
        pred = my_attack(target, session.anon, scenario.unknown_attribute)
        if pred is None:
            session.abstention()
        else:
            session.prediction(*pred)
    result = session.result

:func:`run` wraps exactly this loop.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Iterator, Sequence

import numpy as np

from .attacks import Attack, AttackScenario, PreparedTable, best_row_match, known_values, prepare_tables
from .baseline import BlockPlan, ForestBaseline, ForestParams, SamplingPolicy, downsample_stream, next_block
from .dataset import TabularDataset
from .metrics import (
    Counts,
    PrcParams,
    PrecisionRecallMeasure,
    alc_abs,
    alc_rel,
    make_measure,
    prc,
)

logger = logging.getLogger(__name__)

ATTACK = "attack"
BASELINE = "baseline"
PREDICTION = "prediction"
ABSTENTION = "abstention"

CONVERGED = "converged"
EARLY_SAFE = "early_safe"
EARLY_COMPROMISED = "early_compromised"
DATA_EXHAUSTED = "data_exhausted"
HALT_REASONS = (CONVERGED, EARLY_SAFE, EARLY_COMPROMISED, DATA_EXHAUSTED)


class AttackError(RuntimeError):
    """The attack callback raised; the session cannot continue."""


@dataclass(frozen=True)
class PredictionRecord:
    """One attempt in a ledger.

    ``kind`` is ``"abstention"`` only when no value at all was produced;
    such records never count as predictions. When the attacker abstains but
    the baseline predicted, the baseline's value is recorded for the attack
    with rank 0.0 and ``fallback=True``.
    """

    target_id: object
    ledger: str
    correct: bool
    rank_score: float
    kind: str
    predicted_value: int | None
    true_value: int
    fallback: bool = False


@dataclass(frozen=True)
class HaltConfig:
    n_prc: int = 3
    check_period: int = 20
    min_improvement: float = 0.01
    early_safe_alc: float = 0.4
    early_compromised_alc: float = 0.9
    early_gate_width: float = 0.5

    def __post_init__(self) -> None:
        if self.n_prc < 1 or self.check_period < 1:
            raise ValueError("n_prc and check_period must be at least 1")


@dataclass
class HaltState:
    n_prc: int = 3
    last_lowest_recall_prcs: tuple[float, ...] | None = None


@dataclass(frozen=True)
class AlcResult:
    prc_atk: float | None
    prc_base: float | None
    alc_rel: float | None
    alc_abs: float | None
    atk_measures: tuple[PrecisionRecallMeasure, ...]
    base_measures: tuple[PrecisionRecallMeasure, ...]
    halt_reason: str
    n_prc: int = 3

    @property
    def alc(self) -> float | None:
        return self.alc_rel

    @property
    def best_atk_measure(self) -> PrecisionRecallMeasure | None:
        if not self.atk_measures:
            return None
        return max(self.atk_measures, key=lambda m: m.prc)

    @property
    def n_attempts(self) -> int:
        return self.atk_measures[0].counts.attempts if self.atk_measures else 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["atk_measures"] = [_measure_dict(m) for m in self.atk_measures]
        d["base_measures"] = [_measure_dict(m) for m in self.base_measures]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AlcResult":
        def measure(m: dict) -> PrecisionRecallMeasure:
            return PrecisionRecallMeasure(**{**m, "counts": Counts(**m["counts"])})

        return cls(
            prc_atk=d["prc_atk"], prc_base=d["prc_base"], alc_rel=d["alc_rel"], alc_abs=d["alc_abs"],
            atk_measures=tuple(measure(m) for m in d["atk_measures"]),
            base_measures=tuple(measure(m) for m in d["base_measures"]),
            halt_reason=d["halt_reason"], n_prc=d.get("n_prc", 3),
        )


def _measure_dict(m: PrecisionRecallMeasure) -> dict:
    return {
        "counts": {"T": m.counts.T, "F": m.counts.F, "A": m.counts.A},
        "threshold": m.threshold, "p_meas": m.p_meas, "p_lower": m.p_lower, "p_upper": m.p_upper,
        "p_prob": m.p_prob, "recall": m.recall, "prc": m.prc,
    }


# -- sweeps and halting ----------------------------------------------------


def threshold_sweep(ledger: Sequence[PredictionRecord], n_prc: int,
                    params: PrcParams = PrcParams()) -> list[PrecisionRecallMeasure]:
    """Precision/recall measures at up to ``n_prc`` rank-score thresholds.

    Prediction rank scores are cut into ``n_prc`` equal-count bins (highest
    first); each threshold admits the top ``k/n_prc`` share of predictions,
    the last one admits them all. Tied scores can merge thresholds, so fewer
    measures may come back. Measures are ordered by increasing recall.
    """
    if n_prc < 1:
        raise ValueError("n_prc must be at least 1")
    attempts = len(ledger)
    preds = [r for r in ledger if r.kind == PREDICTION]
    if not preds:
        raise ValueError("no predictions")
    ranks = np.array([r.rank_score for r in preds], dtype=float)
    correct = np.array([r.correct for r in preds], dtype=bool)
    order = np.argsort(-ranks, kind="stable")
    ranks, correct = ranks[order], correct[order]
    n = len(ranks)
    thresholds: list[float] = []
    for k in range(1, n_prc + 1):
        thr = float(ranks[math.ceil(k * n / n_prc) - 1])
        if not thresholds or thr < thresholds[-1]:
            thresholds.append(thr)
    measures = []
    for thr in thresholds:
        taken = ranks >= thr
        T = int(np.count_nonzero(correct & taken))
        F = int(np.count_nonzero(~correct & taken))
        measures.append(make_measure(Counts(T, F, attempts - T - F), thr, params))
    return measures


def _alc_or_floor(prc_atk: float, prc_base: float) -> float:
    if prc_base >= 1.0:
        return 0.0
    return alc_rel(prc_atk, prc_base)


def _bounded_prc(measures: Sequence[PrecisionRecallMeasure], bound: str, params: PrcParams) -> float:
    return max(prc(getattr(m, bound), m.recall, params) for m in measures)


def check_halt(atk_ledger: Sequence[PredictionRecord], base_ledger: Sequence[PredictionRecord],
               state: HaltState, cfg: HaltConfig = HaltConfig(),
               params: PrcParams = PrcParams()) -> str | None:
    """Return a halt reason, or ``None`` to keep measuring.

    May advance ``state`` (growing ``n_prc`` and storing the PRC snapshot of
    the lowest-recall attack measures).
    """
    if not any(r.kind == PREDICTION for r in atk_ledger) or not any(r.kind == PREDICTION for r in base_ledger):
        return None
    atk = threshold_sweep(atk_ledger, state.n_prc, params)
    base = threshold_sweep(base_ledger, state.n_prc, params)

    if atk[-1].ci_width < cfg.early_gate_width and base[-1].ci_width < cfg.early_gate_width:
        optimistic = _alc_or_floor(_bounded_prc(atk, "p_upper", params), _bounded_prc(base, "p_lower", params))
        if optimistic < cfg.early_safe_alc:
            return EARLY_SAFE
        pessimistic = _alc_or_floor(_bounded_prc(atk, "p_lower", params), _bounded_prc(base, "p_upper", params))
        if pessimistic > cfg.early_compromised_alc:
            return EARLY_COMPROMISED

    limit = params.target_ci_width
    if any(m.ci_width > limit for m in atk) or any(m.ci_width > limit for m in base):
        return None
    if len(atk) < state.n_prc:
        # not enough distinct rank scores to fill n_prc measures
        return CONVERGED
    lowest = tuple(m.prc for m in atk[:3])
    prev = state.last_lowest_recall_prcs
    if prev is None or all(c - p >= cfg.min_improvement for c, p in zip(lowest, prev)):
        state.last_lowest_recall_prcs = lowest
        state.n_prc += 1
        return None
    return CONVERGED


def finalize(atk_ledger: Sequence[PredictionRecord], base_ledger: Sequence[PredictionRecord],
             n_prc: int, halt_reason: str, params: PrcParams = PrcParams()) -> AlcResult:
    """Best attack PRC against best baseline PRC."""
    has_atk = any(r.kind == PREDICTION for r in atk_ledger)
    has_base = any(r.kind == PREDICTION for r in base_ledger)
    if not (has_atk and has_base):
        return AlcResult(None, None, None, None, (), (), DATA_EXHAUSTED, n_prc)
    atk = threshold_sweep(atk_ledger, n_prc, params)
    base = threshold_sweep(base_ledger, n_prc, params)
    return result_from_measures(atk, base, halt_reason, n_prc)


def result_from_measures(atk: Sequence[PrecisionRecallMeasure], base: Sequence[PrecisionRecallMeasure],
                         halt_reason: str, n_prc: int) -> AlcResult:
    if not atk or not base:
        raise ValueError("empty measure list")
    prc_atk = max(m.prc for m in atk)
    prc_base = max(m.prc for m in base)
    return AlcResult(
        prc_atk=prc_atk,
        prc_base=prc_base,
        alc_rel=alc_rel(prc_atk, prc_base),
        alc_abs=alc_abs(prc_atk, prc_base),
        atk_measures=tuple(atk),
        base_measures=tuple(base),
        halt_reason=halt_reason,
        n_prc=n_prc,
    )


def full_recall_only(result: AlcResult) -> AlcResult:
    """Keep only the all-predictions measure of each ledger."""
    if not result.atk_measures:
        return result
    atk = max(result.atk_measures, key=lambda m: m.recall)
    base = max(result.base_measures, key=lambda m: m.recall)
    return result_from_measures([atk], [base], result.halt_reason, result.n_prc)


# -- the session -----------------------------------------------------------


class MeasurementSession:
    """Drive one attack scenario against an original/anonymized pair.

    Targets come from the original data in shuffled blocks; each block is
    held out while the baseline is trained on the remainder. The halting
    rules are evaluated every ``halt.check_period`` attempts.
    """

    def __init__(
        self,
        orig: TabularDataset,
        anon: Sequence[TabularDataset],
        scenario: AttackScenario,
        prc_params: PrcParams = PrcParams(),
        halt: HaltConfig = HaltConfig(),
        forest: ForestParams = ForestParams(),
        seed: int = 0,
        baseline=None,
        ignore_attack_rank: bool = False,
        downsample: bool = True,
    ) -> None:
        if not anon:
            raise ValueError("at least one anonymized table is required")
        scenario.validate(orig)
        self.orig = orig
        self.scenario = scenario
        self.prc_params = prc_params
        self.halt_config = halt
        self.seed = seed
        self.anon: list[PreparedTable] = prepare_tables(orig, anon)
        self.baseline = baseline or ForestBaseline(scenario.known_attributes, scenario.unknown_attribute,
                                                   forest, seed)
        self.ignore_attack_rank = ignore_attack_rank
        self.downsample = downsample
        self.state = HaltState(n_prc=halt.n_prc)
        self.atk_ledger: list[PredictionRecord] = []
        self.base_ledger: list[PredictionRecord] = []
        self.result: AlcResult | None = None
        self._pending: tuple | None = None

    @property
    def records(self) -> list[PredictionRecord]:
        return self.atk_ledger + self.base_ledger

    def prediction(self, value: int, rank_score: float) -> None:
        rid, true_value, _, _, _ = self._take()
        rank = 1.0 if self.ignore_attack_rank else float(rank_score)
        self.atk_ledger.append(PredictionRecord(rid, ATTACK, int(value) == true_value, rank, PREDICTION,
                                                int(value), true_value))

    def abstention(self) -> None:
        rid, true_value, bval, _, bmade = self._take()
        if bmade:
            self.atk_ledger.append(PredictionRecord(rid, ATTACK, bval == true_value, 0.0, PREDICTION,
                                                    bval, true_value, fallback=True))
        else:
            self.atk_ledger.append(PredictionRecord(rid, ATTACK, False, 0.0, ABSTENTION, None, true_value))

    def _take(self) -> tuple:
        if self._pending is None:
            raise RuntimeError("no target awaiting an answer")
        pending, self._pending = self._pending, None
        return pending

    def targets(self, chunk: int = 20) -> Iterator[dict[str, float]]:
        """Yield the known attributes of each target until halting."""
        sc = self.scenario
        unknown = sc.unknown_attribute
        plan = BlockPlan.shuffled(self.orig, self.seed)
        policy = SamplingPolicy.from_labels(self.orig.labels(unknown)) if self.downsample else SamplingPolicy()
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 1]))
        truth = self.orig.labels(unknown)
        while not plan.exhausted:
            holdout, training = next_block(plan, self.orig)
            self.baseline.fit(training)
            positions = list(downsample_stream(holdout.labels(unknown), policy, rng))
            ids = holdout.row_ids
            for start in range(0, len(positions), chunk):
                batch = ids[positions[start:start + chunk]]
                bvals, branks, bmade = self.baseline.predict(self.orig.subset(batch))
                for j, rid in enumerate(batch):
                    pos = self.orig.row_position(rid)
                    true_value = int(truth[pos])
                    bval = int(bvals[j])
                    if bmade[j]:
                        self.base_ledger.append(PredictionRecord(rid, BASELINE, bval == true_value,
                                                                 float(branks[j]), PREDICTION, bval, true_value))
                    else:
                        self.base_ledger.append(PredictionRecord(rid, BASELINE, False, 0.0, ABSTENTION,
                                                                 None, true_value))
                    self._pending = (rid, true_value, bval, float(branks[j]), bool(bmade[j]))
                    yield known_values(self.orig, pos, sc.known_attributes)
                    if self._pending is not None:
                        raise RuntimeError("the attack neither predicted nor abstained for the last target")
                    if len(self.atk_ledger) % self.halt_config.check_period == 0:
                        reason = check_halt(self.atk_ledger, self.base_ledger, self.state,
                                            self.halt_config, self.prc_params)
                        if reason is not None:
                            self._finish(reason)
                            return
        self._finish(DATA_EXHAUSTED)

    def _finish(self, reason: str) -> None:
        self.result = finalize(self.atk_ledger, self.base_ledger, self.state.n_prc, reason, self.prc_params)
        logger.debug("scenario %s halted: %s after %d attempts", self.scenario.label, reason,
                     len(self.atk_ledger))

    def prediction_rows(self) -> list[dict]:
        """Per-prediction table with decoded values."""
        unknown = self.scenario.unknown_attribute
        out = []
        for r in self.records:
            out.append({
                "scenario": self.scenario.label,
                "target_id": r.target_id,
                "ledger": r.ledger,
                "kind": r.kind,
                "fallback": r.fallback,
                "correct": r.correct,
                "rank_score": r.rank_score,
                "predicted_value": "" if r.predicted_value is None else self.orig.decode_label(unknown, r.predicted_value),
                "true_value": self.orig.decode_label(unknown, r.true_value),
            })
        return out


def run(scenario: AttackScenario, orig: TabularDataset, anon: Sequence[TabularDataset],
        attacker: Attack = best_row_match, seed: int = 0, **kwargs) -> MeasurementSession:
    """Run the full measurement loop and return the halted session."""
    session = MeasurementSession(orig, anon, scenario, seed=seed, **kwargs)
    for target in session.targets():
        try:
            pred = attacker(target, session.anon, scenario.unknown_attribute)
        except Exception as exc:
            raise AttackError(f"attack failed on scenario {scenario.label!r}: {exc}") from exc
        if pred is None:
            session.abstention()
        else:
            session.prediction(*pred)
    return session


def ledgers_from_rows(rows: Sequence[dict]) -> tuple[list[PredictionRecord], list[PredictionRecord]]:
    """Rebuild ledgers from a persisted prediction table (values stay decoded)."""
    atk, base = [], []
    for r in rows:
        rec = PredictionRecord(r["target_id"], r["ledger"], _truthy(r["correct"]), float(r["rank_score"]),
                               r["kind"], r["predicted_value"], r["true_value"], _truthy(r.get("fallback", False)))
        (atk if rec.ledger == ATTACK else base).append(rec)
    return atk, base


def _truthy(v) -> bool:
    if isinstance(v, str):
        return v.strip().lower() in ("true", "1")
    return bool(v)


__all__ = [
    "ABSTENTION", "ATTACK", "AlcResult", "AttackError", "BASELINE", "CONVERGED", "DATA_EXHAUSTED",
    "EARLY_COMPROMISED", "EARLY_SAFE", "HALT_REASONS", "HaltConfig", "HaltState", "MeasurementSession",
    "PREDICTION", "PredictionRecord", "check_halt", "finalize", "full_recall_only", "ledgers_from_rows",
    "result_from_measures", "run", "threshold_sweep",
]
