"""Command-line entry point.

Commands: measure, anonymize, compare, curves, replication-study. Every
command that reads a config takes a JSON document validated against the
models below; unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import harness, report
from .attacks import AttackScenario
from .baseline import SKLEARN_DEFAULTS, ForestParams
from .dataset import DEFAULT_BINS, AnonymizationConfig, TabularDataset, load_csv, swap_anonymize
from .metrics import PrcParams, risk_class
from .session import ATTACK, BASELINE, HaltConfig, run
from .synth import make_dataset

logger = logging.getLogger("anonloss")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ScenarioConfig(_Strict):
    known: list[str] = Field(min_length=1)
    unknown: str
    label: Optional[str] = None


class ScoringConfig(_Strict):
    """PRC, halting and forest settings shared by all commands."""

    alpha: float = 3.0
    r_min: float = 0.0001
    z: float = 1.96
    ci_width: float = 0.1
    n_prc: int = 3
    check_period: int = 20
    min_improvement: float = 0.01
    early_safe_alc: float = 0.4
    early_compromised_alc: float = 0.9
    n_trees: int = 200
    min_split: int = 10
    min_leaf: int = 10
    bins: int = DEFAULT_BINS
    seed: int = 0

    def prc_params(self) -> PrcParams:
        return PrcParams(self.alpha, self.r_min, self.z, self.ci_width)

    def halt(self) -> HaltConfig:
        return HaltConfig(self.n_prc, self.check_period, self.min_improvement, self.early_safe_alc,
                          self.early_compromised_alc)

    def forest(self, jobs: int = 1) -> ForestParams:
        return ForestParams(self.n_trees, self.min_split, self.min_leaf, jobs)


class MeasureConfig(ScoringConfig):
    original: str
    anonymized: list[str] = Field(min_length=1)
    id_column: Optional[str] = None
    scenarios: list[ScenarioConfig] = Field(min_length=1)


class SyntheticSource(_Strict):
    rows: int = 3000
    seed: int = 0


class DatasetConfig(_Strict):
    name: str
    path: Optional[str] = None
    synthetic: Optional[SyntheticSource] = None
    id_column: Optional[str] = None
    unknowns: Optional[list[str]] = None

    @model_validator(mode="after")
    def _one_source(self) -> "DatasetConfig":
        if (self.path is None) == (self.synthetic is None):
            raise ValueError("exactly one of 'path' or 'synthetic' must be given")
        return self


class CompareConfig(ScoringConfig):
    datasets: list[DatasetConfig] = Field(min_length=1)
    swap_fractions: list[float] = [0.2, 0.8]
    known_sets_per_unknown: int = 5
    uniqueness_target: float = 0.9
    approaches: list[Literal["ours", "prior", "ours_no_recall"]] = ["ours", "prior", "ours_no_recall"]
    max_rows: int = harness.DESK_MAX_ROWS


class ReplicationConfig(ScoringConfig):
    dataset: DatasetConfig
    unknowns: list[str] = Field(min_length=1)
    replication_counts: list[int] = [0, 1, 2, 5, 10]
    n_nonmembers: int = 1000
    rare_fraction: float = 0.1


class ConfigError(Exception):
    pass


def load_config(path: str | None, model: type[BaseModel], seed: int | None = None):
    if path is None:
        raise ConfigError("--config is required")
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if seed is not None:
        raw["seed"] = seed
    try:
        return model.model_validate(raw)
    except ValidationError as exc:
        msgs = [f"{'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("invalid config:\n  " + "\n  ".join(msgs)) from exc


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def load_dataset(cfg: DatasetConfig, base: Path, bins: int) -> TabularDataset:
    if cfg.synthetic is not None:
        return make_dataset(cfg.synthetic.rows, cfg.synthetic.seed)
    return load_csv(_resolve(base, cfg.path), id_column=cfg.id_column, bins=bins)


# -- commands --------------------------------------------------------------


def cmd_measure(args) -> int:
    cfg: MeasureConfig = load_config(args.config, MeasureConfig, args.seed)
    base = Path(args.config).parent
    orig = load_csv(_resolve(base, cfg.original), id_column=cfg.id_column, bins=cfg.bins)
    anon = [load_csv(_resolve(base, p), bins=cfg.bins) for p in cfg.anonymized]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    predictions, measures, entries = [], [], []
    for i, sc_cfg in enumerate(cfg.scenarios):
        scenario = AttackScenario(tuple(sc_cfg.known), sc_cfg.unknown, sc_cfg.label or "")
        session = run(scenario, orig, anon, seed=harness.derive_seed(cfg.seed, i, scenario.label),
                      prc_params=cfg.prc_params(), halt=cfg.halt(), forest=cfg.forest(args.jobs))
        res = session.result
        predictions += session.prediction_rows()
        measures += report.measure_rows(scenario.label, ATTACK, res.atk_measures)
        measures += report.measure_rows(scenario.label, BASELINE, res.base_measures)
        entries.append({"label": scenario.label, "known": list(scenario.known_attributes),
                        "unknown": scenario.unknown_attribute, "risk_class": risk_class(res.alc),
                        "result": res.to_dict()})
        logger.info("%s: ALC %s (%s)", scenario.label, res.alc, res.halt_reason)
    doc = {"scenarios": entries, "config": cfg.model_dump()}
    report.write_csv(out / "predictions.csv", report.PREDICTION_FIELDS, predictions)
    report.write_csv(out / "measures.csv", report.MEASURE_FIELDS, measures)
    report.write_json(out / "results.json", doc)
    (out / "summary.txt").write_text(report.SummaryReport.from_results(doc).render(), encoding="utf-8")
    return 0


def cmd_anonymize(args) -> int:
    ds = load_csv(args.input)
    anon = swap_anonymize(ds, AnonymizationConfig(args.swap_fraction, args.seed or 0))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    anon.to_csv(out)
    return 0


def build_plan(cfg: CompareConfig, base: Path, jobs: int = 1) -> harness.ExperimentPlan:
    datasets = [(d.name, load_dataset(d, base, cfg.bins)) for d in cfg.datasets]
    unknowns = {d.name: d.unknowns for d in cfg.datasets if d.unknowns}
    return harness.ExperimentPlan(
        datasets=datasets, unknowns=unknowns or None, swap_fractions=tuple(cfg.swap_fractions),
        known_sets_per_unknown=cfg.known_sets_per_unknown, uniqueness_target=cfg.uniqueness_target,
        seed=cfg.seed, approaches=tuple(cfg.approaches), prc_params=cfg.prc_params(), halt=cfg.halt(),
        forest=cfg.forest(), max_rows=cfg.max_rows,
    )


RESULT_FIELDS = ["dataset", "swap_fraction", "knowns", "unknown", "approach", "prc_atk", "prc_base", "alc",
                 "alc_abs", "risk_class", "halt_reason", "n_predictions", "n_measures", "best_recall",
                 "best_precision", "status", "error"]
PAIR_FIELDS = ["other_approach", "dataset", "swap_fraction", "knowns", "unknown", "ours_alc", "other_alc",
               "ours_class", "other_class", "ours_recall"]


def write_comparison(out: Path, results: list[harness.ResultRow], approaches) -> None:
    report.write_csv(out / "results.csv", RESULT_FIELDS, harness.rows_as_dicts(results))
    others = [a for a in (harness.PRIOR, harness.OURS_NO_RECALL) if a in approaches]
    pairs, scatter, table = [], [], {}
    for other in others:
        for p in harness.pair_results(results, harness.OURS, other):
            row = {"other_approach": other, **vars(p)}
            pairs.append(row)
            scatter.append({**row, "ours_alc": report.clip_for_plot(p.ours_alc),
                            "other_alc": report.clip_for_plot(p.other_alc)})
        for cell in harness.classify_and_compare(results, harness.OURS, other):
            entry = table.setdefault((cell.ours_class, cell.other_class), {
                "ours_class": cell.ours_class, "other_class": cell.other_class})
            entry[f"{other}_count"] = cell.count
            entry[f"{other}_fraction"] = cell.fraction
    report.write_csv(out / "comparison.csv", PAIR_FIELDS, pairs)
    report.write_csv(out / "scatter.csv", PAIR_FIELDS, scatter)
    table_fields = ["ours_class", "other_class"] + [f"{o}_{s}" for o in others for s in ("count", "fraction")]
    report.write_csv(out / "disagreement.csv", table_fields, table.values())


def cmd_compare(args) -> int:
    cfg: CompareConfig = load_config(args.config, CompareConfig, args.seed)
    if harness.OURS not in cfg.approaches or len(cfg.approaches) < 2:
        raise ConfigError("approaches: comparison needs 'ours' and at least one other approach")
    plan = build_plan(cfg, Path(args.config).parent)
    if not harness.plan_cells(plan):
        raise ConfigError("datasets: the plan has no configurations to run")
    results = harness.run_matrix(plan, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_comparison(out, results, cfg.approaches)
    return 0


def cmd_curves(args) -> int:
    params = PrcParams(alpha=args.alpha, r_min=args.r_min)
    rows = report.curve_rows(args.prc_iso, args.alc_iso, params, args.points)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "curves.csv", report.CURVE_FIELDS, rows)
    return 0


def cmd_replication(args) -> int:
    cfg: ReplicationConfig = load_config(args.config, ReplicationConfig, args.seed)
    ds = load_dataset(cfg.dataset, Path(args.config).parent, cfg.bins)
    variants = {"default": SKLEARN_DEFAULTS, "anti_overfit": cfg.forest()}
    rows = harness.replication_study(ds, cfg.unknowns, cfg.replication_counts, variants,
                                     cfg.n_nonmembers, cfg.rare_fraction, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "replication.csv", ["unknown", "variant", "replicas", "precision", "error",
                                               "n_predictions"], harness.rows_as_dicts(rows))
    agg = [{"variant": v, "replicas": k, "mean_error": e} for (v, k), e in harness.aggregate_replication(rows).items()]
    report.write_csv(out / "replication_summary.csv", ["variant", "replicas", "mean_error"], agg)
    return 0


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="anonloss", description="Attribute-inference anonymity loss measurement")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("measure", parents=[common], help="measure ALC for configured scenarios").set_defaults(func=cmd_measure)

    a = sub.add_parser("anonymize", parents=[common], help="swap a fraction of values within columns")
    a.add_argument("input")
    a.add_argument("--swap-fraction", type=float, required=True)
    a.add_argument("--output", required=True)
    a.set_defaults(func=cmd_anonymize)

    sub.add_parser("compare", parents=[common], help="run the ours-vs-prior attack matrix").set_defaults(func=cmd_compare)

    c = sub.add_parser("curves", parents=[common], help="emit iso-PRC and iso-ALC curve data")
    c.add_argument("--alpha", type=float, default=3.0)
    c.add_argument("--r-min", type=float, default=0.0001)
    c.add_argument("--prc-iso", type=_floats, default=[0.25, 0.5, 0.75])
    c.add_argument("--alc-iso", type=_floats, default=[0.0, 0.5, 0.75])
    c.add_argument("--points", type=int, default=200)
    c.set_defaults(func=cmd_curves)

    sub.add_parser("replication-study", parents=[common],
                   help="dependent-record effect on the baseline").set_defaults(func=cmd_replication)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
