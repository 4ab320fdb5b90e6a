"""Attack framework and the best-row-match attack.

An attack is any callable ``attack(target_known, anon, unknown)`` returning
``(label, rank_score)`` or ``None`` to abstain. ``target_known`` maps each
known column to the target's encoded value (categorical code or raw float),
``anon`` is the list of :class:`PreparedTable` built from the anonymized
release, and labels live in the original dataset's label space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Protocol, Sequence

import numpy as np

from .dataset import CONTINUOUS, TabularDataset, remove_targets

Prediction = Optional[tuple[int, float]]


class Attack(Protocol):
    def __call__(self, target_known: Mapping[str, float], anon: Sequence["PreparedTable"],
                 unknown: str) -> Prediction: ...


@dataclass(frozen=True)
class AttackScenario:
    known_attributes: tuple[str, ...]
    unknown_attribute: str
    label: str = ""
    selection_mode: str = "random"

    def __post_init__(self) -> None:
        object.__setattr__(self, "known_attributes", tuple(self.known_attributes))
        if self.unknown_attribute in self.known_attributes:
            raise ValueError("unknown attribute must not be among the known attributes")
        if self.selection_mode != "random":
            raise ValueError("only random target selection is supported")
        if not self.label:
            object.__setattr__(self, "label", f"{'+'.join(self.known_attributes)}->{self.unknown_attribute}")

    def validate(self, ds: TabularDataset) -> None:
        missing = [c for c in (*self.known_attributes, self.unknown_attribute) if not ds.has_column(c)]
        if missing:
            raise ValueError(f"scenario {self.label!r}: columns not in dataset: {missing}")


@dataclass(frozen=True)
class MatchResult:
    g_min: float
    C: int
    M: int
    predicted_value: int

    @property
    def rank_score(self) -> float:
        return (1.0 - self.g_min) * (self.M / self.C)


class PreparedTable:
    """Column arrays of one anonymized table, ready for Gower scans.

    Continuous ranges come from this table's own values, since that is the
    data the attacker actually holds.
    """

    def __init__(self, ds: TabularDataset) -> None:
        self.dataset = ds
        self.kinds: dict[str, str] = {}
        self.arrays: dict[str, np.ndarray] = {}
        self.ranges: dict[str, float] = {}
        self._labels: dict[str, np.ndarray] = {}
        for col in ds.schema:
            self.kinds[col.name] = col.kind
            arr = ds.codes(col.name)
            self.arrays[col.name] = arr
            if col.kind == CONTINUOUS:
                self.ranges[col.name] = float(arr.max() - arr.min()) if len(arr) else 0.0

    def __len__(self) -> int:
        return len(self.dataset)

    def has(self, name: str) -> bool:
        return name in self.arrays

    def labels(self, name: str) -> np.ndarray:
        if name not in self._labels:
            self._labels[name] = self.dataset.labels(name)
        return self._labels[name]

    def record(self, pos: int) -> dict[str, float]:
        return {k: v[pos].item() for k, v in self.arrays.items()}

    def distances(self, target_known: Mapping[str, float], known: Sequence[str]) -> np.ndarray:
        """Gower distance from the target to every row of the table."""
        total = np.zeros(len(self), dtype=float)
        for name in known:
            if name not in self.arrays:
                total = total + 1.0
                continue
            total = total + _attribute_term(target_known[name], self.arrays[name],
                                            self.kinds[name], self.ranges.get(name, 0.0))
        return total / len(known)


def _attribute_term(a, b, kind: str, value_range: float):
    if kind == CONTINUOUS:
        if value_range > 0:
            return np.minimum(np.abs(a - b) / value_range, 1.0)
        return np.where(a == b, 0.0, 1.0)
    return np.where(a == b, 0.0, 1.0)


def gower_distance(target_known: Mapping[str, float], candidate: Mapping[str, float],
                   kinds: Mapping[str, str], known: Sequence[str],
                   ranges: Mapping[str, float] | None = None) -> float:
    """Gower distance between a target and one candidate row.

    Known attributes missing from ``candidate`` count as a full mismatch.
    ``ranges`` gives the normalizing range of each continuous column.
    """
    if not known:
        raise ValueError("at least one known attribute is required")
    ranges = ranges or {}
    total = 0.0
    for name in known:
        if name not in candidate:
            total = total + 1.0
            continue
        total = total + float(_attribute_term(target_known[name], candidate[name],
                                              kinds[name], ranges.get(name, 0.0)))
    return total / len(known)


def prepare_tables(orig: TabularDataset, anon: Sequence[TabularDataset]) -> list[PreparedTable]:
    """Encode anonymized tables against the original and build scan arrays."""
    return [PreparedTable(orig.like(a.frame)) for a in anon]


def best_row_match_detail(target_known: Mapping[str, float], anon: Sequence[PreparedTable],
                          unknown: str, known: Sequence[str] | None = None) -> MatchResult | None:
    known = list(target_known) if known is None else list(known)
    best = np.inf
    matched: list[np.ndarray] = []
    for table in anon:
        if not table.has(unknown) or not any(table.has(k) for k in known):
            continue
        if len(table) == 0:
            continue
        dist = table.distances(target_known, known)
        g = dist.min()
        if g < best:
            best = g
            matched = []
        if g == best:
            matched.append(table.labels(unknown)[dist == g])
    if not matched:
        return None
    labels = np.concatenate(matched)
    values, counts = np.unique(labels, return_counts=True)
    top = int(np.argmax(counts))
    return MatchResult(g_min=float(best), C=int(len(labels)), M=int(counts[top]),
                       predicted_value=int(values[top]))


def best_row_match(target_known: Mapping[str, float], anon: Sequence[PreparedTable],
                   unknown: str) -> Prediction:
    """Predict the modal unknown value among the rows closest to the target.

    The rank score is ``(1 - g_min) * M / C`` where ``C`` rows share the
    minimum distance and ``M`` of them carry the modal value. Modal ties go
    to the lowest label. Abstains when no table holds the unknown column and
    at least one known column.
    """
    match = best_row_match_detail(target_known, anon, unknown)
    if match is None:
        return None
    return match.predicted_value, match.rank_score


def known_values(ds: TabularDataset, pos: int, known: Sequence[str]) -> dict[str, float]:
    return {k: ds.codes(k)[pos].item() for k in known}


Anonymizer = Callable[[TabularDataset, int], "TabularDataset | Sequence[TabularDataset]"]


class PriorBaseline:
    """Baseline of the prior approach: rerun the attack on anonymized data
    built without the target.

    For every target the original minus that individual is anonymized with
    ``anonymizer`` and attacked with ``attack``; rank scores are discarded.
    """

    def __init__(self, orig: TabularDataset, scenario: AttackScenario, anonymizer: Anonymizer,
                 attack: Attack = best_row_match, seed: int = 0) -> None:
        self.orig = orig
        self.scenario = scenario
        self.anonymizer = anonymizer
        self.attack = attack
        self.seed = seed
        self._individuals = orig.individuals

    def fit(self, train: TabularDataset) -> None:
        # the prior approach needs no model; each target is handled alone
        return None

    def predict_one(self, row_id) -> Prediction:
        sc = self.scenario
        pos = self.orig.row_position(row_id)
        target = known_values(self.orig, pos, sc.known_attributes)
        remainder = remove_targets(self.orig, [self._individuals.loc[row_id]])
        seed = int(np.random.SeedSequence([self.seed, pos]).generate_state(1)[0])
        anon = self.anonymizer(remainder, seed)
        if isinstance(anon, TabularDataset):
            anon = [anon]
        tables = prepare_tables(self.orig, anon)
        pred = self.attack(target, tables, sc.unknown_attribute)
        if pred is None:
            return None
        return pred[0], 1.0

    def predict(self, rows: TabularDataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Labels, rank scores, and a mask of rows where a prediction was made."""
        n = len(rows)
        values = np.zeros(n, dtype=np.int64)
        ranks = np.zeros(n, dtype=float)
        made = np.zeros(n, dtype=bool)
        for i, rid in enumerate(rows.row_ids):
            pred = self.predict_one(rid)
            if pred is not None:
                values[i], ranks[i] = pred
                made[i] = True
        return values, ranks, made


def prior_mode_baseline(scenario: AttackScenario, orig: TabularDataset, anon_builder: Anonymizer,
                        targets: Sequence, attack: Attack = best_row_match, seed: int = 0):
    """Baseline ledger of the prior approach for an explicit list of target row ids."""
    from .session import BASELINE, PredictionRecord

    if len(targets) == 0:
        raise ValueError("empty target list")
    scenario.validate(orig)
    base = PriorBaseline(orig, scenario, anon_builder, attack, seed)
    truth = orig.labels(scenario.unknown_attribute)
    ledger = []
    for rid in targets:
        pos = orig.row_position(rid)
        true_value = int(truth[pos])
        pred = base.predict_one(rid)
        if pred is None:
            ledger.append(PredictionRecord(rid, BASELINE, False, 0.0, "abstention", None, true_value))
        else:
            ledger.append(PredictionRecord(rid, BASELINE, pred[0] == true_value, 1.0, "prediction",
                                           pred[0], true_value))
    return ledger
