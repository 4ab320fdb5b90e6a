"""Experiment orchestration: known-attribute selection, the attack matrix
comparing our approach with the prior approach, the disagreement table and
the dependent-record replication study.
"""

from __future__ import annotations

import itertools
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Iterable, Sequence

import numpy as np

from .attacks import AttackScenario, PriorBaseline
from .baseline import SKLEARN_DEFAULTS, ForestParams, feature_matrix, fit
from .dataset import AnonymizationConfig, TabularDataset, remove_targets, replicate_records, swap_anonymize
from .metrics import RISK_CLASSES, PrcParams, risk_class
from .session import AlcResult, HaltConfig, full_recall_only, run

logger = logging.getLogger(__name__)

OURS = "ours"
PRIOR = "prior"
OURS_NO_RECALL = "ours_no_recall"
APPROACHES = (OURS, PRIOR, OURS_NO_RECALL)

DESK_MAX_ROWS = 5000


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from arbitrary printable parts."""
    words = [zlib.crc32(str(p).encode()) for p in parts]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


# -- known attribute sets --------------------------------------------------


def uniqueness_fraction(ds: TabularDataset, columns: Sequence[str]) -> float:
    if not columns or len(ds) == 0:
        return 0.0
    dup = ds.frame[list(columns)].duplicated(keep=False)
    return float((~dup).mean())


def generate_known_sets(ds: TabularDataset, unknown: str, n_sets: int = 5, uniqueness_target: float = 0.9,
                        seed: int = 0, draws_per_size: int = 200) -> list[tuple[str, ...]]:
    """Pick small random column sets whose value combinations are mostly unique.

    Sizes are tried from 1 upward; at each size up to ``draws_per_size``
    random combinations are checked, and qualifying ones are collected
    until ``n_sets`` are found.
    """
    if len(ds.columns) < 2:
        raise ValueError("need at least two columns")
    candidates = [c for c in ds.columns if c != unknown]
    rng = np.random.default_rng(seed)
    found: list[tuple[str, ...]] = []
    for size in range(1, len(candidates) + 1):
        total = math.comb(len(candidates), size)
        if total <= draws_per_size:
            combos = list(itertools.combinations(candidates, size))
            combos = [combos[i] for i in rng.permutation(len(combos))]
        else:
            seen: set[tuple[str, ...]] = set()
            combos = []
            while len(combos) < draws_per_size:
                pick = tuple(sorted(rng.choice(len(candidates), size=size, replace=False)))
                if pick not in seen:
                    seen.add(pick)
                    combos.append(tuple(candidates[i] for i in pick))
        for combo in combos:
            if uniqueness_fraction(ds, combo) >= uniqueness_target:
                found.append(combo)
                if len(found) == n_sets:
                    return found
    if not found:
        logger.warning("uniqueness target %.2f unreachable for %r; using all columns", uniqueness_target, unknown)
        return [tuple(candidates)]
    return found


# -- the attack matrix -----------------------------------------------------


@dataclass
class ExperimentPlan:
    datasets: list[tuple[str, TabularDataset]]
    unknowns: dict[str, list[str]] | None = None
    swap_fractions: tuple[float, ...] = (0.2, 0.8)
    known_sets_per_unknown: int = 5
    uniqueness_target: float = 0.9
    seed: int = 0
    approaches: tuple[str, ...] = APPROACHES
    prc_params: PrcParams = field(default_factory=PrcParams)
    halt: HaltConfig = field(default_factory=HaltConfig)
    forest: ForestParams = field(default_factory=ForestParams)
    max_rows: int = DESK_MAX_ROWS

    def __post_init__(self) -> None:
        if not self.datasets:
            raise ValueError("plan has no datasets")
        if any(not 0.0 <= f <= 1.0 for f in self.swap_fractions):
            raise ValueError("swap fractions must lie in [0, 1]")
        if self.known_sets_per_unknown < 1:
            raise ValueError("known_sets_per_unknown must be at least 1")
        bad = set(self.approaches) - set(APPROACHES)
        if bad:
            raise ValueError(f"unknown approaches: {sorted(bad)}")


@dataclass
class ResultRow:
    dataset: str
    swap_fraction: float
    knowns: str
    unknown: str
    approach: str
    prc_atk: float | None = None
    prc_base: float | None = None
    alc: float | None = None
    alc_abs: float | None = None
    risk_class: str = ""
    halt_reason: str = ""
    n_predictions: int = 0
    n_measures: int = 0
    best_recall: float | None = None
    best_precision: float | None = None
    status: str = "ok"
    error: str = ""

    @property
    def key(self) -> tuple:
        return (self.dataset, self.swap_fraction, self.knowns, self.unknown)


def _swap(ds: TabularDataset, seed: int, fraction: float) -> TabularDataset:
    return swap_anonymize(ds, AnonymizationConfig(fraction, seed))


def _row_from_result(base: dict, approach: str, result: AlcResult) -> ResultRow:
    best = result.best_atk_measure
    status = "ok" if result.alc is not None else "no_predictions"
    return ResultRow(
        **base, approach=approach, prc_atk=result.prc_atk, prc_base=result.prc_base, alc=result.alc_rel,
        alc_abs=result.alc_abs, risk_class=risk_class(result.alc), halt_reason=result.halt_reason,
        n_predictions=result.n_attempts, n_measures=len(result.atk_measures),
        best_recall=best.recall if best else None, best_precision=best.p_prob if best else None,
        status=status,
    )


def _run_cell(cell: dict) -> list[ResultRow]:
    orig: TabularDataset = cell["orig"]
    fraction: float = cell["fraction"]
    scenario = AttackScenario(cell["knowns"], cell["unknown"])
    base = dict(dataset=cell["name"], swap_fraction=fraction, knowns="+".join(cell["knowns"]),
                unknown=cell["unknown"])
    anon = _swap(orig, cell["anon_seed"], fraction)
    approaches = cell["approaches"]
    rows: list[ResultRow] = []
    common = dict(prc_params=cell["prc_params"], halt=cell["halt"], forest=cell["forest"])
    if OURS in approaches or OURS_NO_RECALL in approaches:
        try:
            ours = run(scenario, orig, [anon], seed=cell["seed"], **common).result
            if OURS in approaches:
                rows.append(_row_from_result(base, OURS, ours))
            if OURS_NO_RECALL in approaches:
                rows.append(_row_from_result(base, OURS_NO_RECALL, full_recall_only(ours)))
        except Exception as exc:  # recorded, the matrix carries on
            logger.exception("cell %s failed", base)
            for a in (OURS, OURS_NO_RECALL):
                if a in approaches:
                    rows.append(ResultRow(**base, approach=a, status="failed", error=str(exc)))
    if PRIOR in approaches:
        try:
            prior = PriorBaseline(orig, scenario, partial(_swap, fraction=fraction), seed=cell["seed"])
            res = run(scenario, orig, [anon], seed=cell["seed"], baseline=prior, ignore_attack_rank=True,
                      **common).result
            rows.append(_row_from_result(base, PRIOR, res))
        except Exception as exc:
            logger.exception("cell %s failed", base)
            rows.append(ResultRow(**base, approach=PRIOR, status="failed", error=str(exc)))
    order = {a: i for i, a in enumerate(APPROACHES)}
    return sorted(rows, key=lambda r: order[r.approach])


def plan_cells(plan: ExperimentPlan) -> list[dict]:
    cells = []
    for name, ds in plan.datasets:
        if len(ds) > plan.max_rows:
            rng = np.random.default_rng(derive_seed(plan.seed, name, "cap"))
            keep = np.sort(rng.choice(len(ds), size=plan.max_rows, replace=False))
            ds = ds.subset(ds.row_ids[keep])
        unknowns = (plan.unknowns or {}).get(name) or ds.columns
        for unknown in unknowns:
            sets = generate_known_sets(ds, unknown, plan.known_sets_per_unknown, plan.uniqueness_target,
                                       derive_seed(plan.seed, name, unknown, "knowns"))
            for fraction in plan.swap_fractions:
                for knowns in sets:
                    cells.append(dict(
                        orig=ds, name=name, fraction=fraction, knowns=knowns, unknown=unknown,
                        anon_seed=derive_seed(plan.seed, name, fraction, "anon"),
                        seed=derive_seed(plan.seed, name, fraction, unknown, "+".join(knowns)),
                        approaches=tuple(plan.approaches), prc_params=plan.prc_params,
                        halt=plan.halt, forest=plan.forest,
                    ))
    return cells


def run_matrix(plan: ExperimentPlan, jobs: int = 1) -> list[ResultRow]:
    """Run every configuration under every requested approach.

    Each cell depends only on its own seeds, so results are identical for
    any ``jobs``.
    """
    cells = plan_cells(plan)
    if jobs <= 1:
        parts = [_run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_cell, cells))
    return [row for part in parts for row in part]


# -- comparison ------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonCell:
    ours_class: str
    other_class: str
    count: int
    fraction: float


@dataclass(frozen=True)
class PairedResult:
    dataset: str
    swap_fraction: float
    knowns: str
    unknown: str
    ours_alc: float | None
    other_alc: float | None
    ours_class: str
    other_class: str
    ours_recall: float | None


def pair_results(results: Iterable[ResultRow], ours: str = OURS, other: str = PRIOR) -> list[PairedResult]:
    results = list(results)
    a = {r.key: r for r in results if r.approach == ours}
    b = {r.key: r for r in results if r.approach == other}
    if set(a) != set(b):
        raise ValueError(f"configurations differ between {ours!r} and {other!r}")
    return [
        PairedResult(*k, a[k].alc, b[k].alc, a[k].risk_class or risk_class(a[k].alc),
                     b[k].risk_class or risk_class(b[k].alc), a[k].best_recall)
        for k in a
    ]


def classify_and_compare(results: Iterable[ResultRow], ours: str = OURS,
                         other: str = PRIOR) -> list[ComparisonCell]:
    """Cross-tabulate risk classes of two approaches over shared configurations."""
    pairs = pair_results(results, ours, other)
    total = len(pairs)
    cells = []
    for oc in RISK_CLASSES:
        for xc in RISK_CLASSES:
            n = sum(1 for p in pairs if p.ours_class == oc and p.other_class == xc)
            cells.append(ComparisonCell(oc, xc, n, n / total if total else 0.0))
    return cells


# -- dependent records -----------------------------------------------------


@dataclass
class ReplicationRow:
    unknown: str
    variant: str
    replicas: int
    precision: float
    error: float
    n_predictions: int


def replication_study(ds: TabularDataset, unknowns: Sequence[str],
                      replication_counts: Sequence[int] = (0, 1, 2, 5, 10),
                      hyper_variants: dict[str, ForestParams] | None = None,
                      n_nonmembers: int = 1000, rare_fraction: float = 0.1,
                      seed: int = 0) -> list[ReplicationRow]:
    """Effect of replicated non-member records on baseline precision.

    For each unknown, non-members are drawn among rows whose unknown value
    is rarer than ``rare_fraction``. They are removed from the training data
    and then added back ``k`` times as members; the error is the absolute
    change in baseline precision on them relative to ``k = 0``.
    """
    variants = hyper_variants or {"default": SKLEARN_DEFAULTS, "anti_overfit": ForestParams()}
    counts = sorted(set(replication_counts) | {0})
    out: list[ReplicationRow] = []
    for unknown in unknowns:
        labels = ds.labels(unknown)
        values, freq = np.unique(labels, return_counts=True)
        rare = set(values[freq / len(labels) < rare_fraction].tolist())
        eligible = ds.row_ids[np.isin(labels, list(rare))]
        if len(eligible) == 0:
            logger.warning("no rows with values rarer than %.0f%% for %r; skipped", 100 * rare_fraction, unknown)
            continue
        rng = np.random.default_rng(derive_seed(seed, unknown, "nonmembers"))
        picked = np.sort(rng.choice(eligible, size=min(n_nonmembers, len(eligible)), replace=False))
        known = [c for c in ds.columns if c != unknown]
        targets = ds.subset(picked)
        truth = targets.labels(unknown)
        X = feature_matrix(targets, known)
        for vname, params in variants.items():
            baseline_precision = None
            for k in counts:
                train = remove_targets(replicate_records(ds, picked, k), picked)
                model = fit(train, known, unknown, params, derive_seed(seed, unknown, vname))
                pred, _ = model.vote(X)
                precision = float(np.mean(pred == truth))
                if baseline_precision is None:
                    baseline_precision = precision
                out.append(ReplicationRow(unknown, vname, k, precision, abs(precision - baseline_precision),
                                          len(picked)))
    return out


def aggregate_replication(rows: Iterable[ReplicationRow]) -> dict[tuple[str, int], float]:
    """Mean absolute precision error per (variant, replicas) across unknowns."""
    acc: dict[tuple[str, int], list[float]] = {}
    for r in rows:
        acc.setdefault((r.variant, r.replicas), []).append(r.error)
    return {k: float(np.mean(v)) for k, v in sorted(acc.items())}


def rows_as_dicts(rows: Iterable) -> list[dict]:
    return [asdict(r) for r in rows]
