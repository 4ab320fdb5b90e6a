"""Attribute-inference anonymity loss measurement for anonymized tabular data."""

from .attacks import AttackScenario, PriorBaseline, best_row_match, gower_distance, prior_mode_baseline
from .dataset import AnonymizationConfig, TabularDataset, load_csv, swap_anonymize
from .metrics import PrcParams, alc_abs, alc_rel, prc, risk_class, wilson_interval
from .session import AlcResult, HaltConfig, MeasurementSession, run

__version__ = "0.1.0"

__all__ = [
    "AlcResult", "AnonymizationConfig", "AttackScenario", "HaltConfig", "MeasurementSession", "PrcParams",
    "PriorBaseline", "TabularDataset", "alc_abs", "alc_rel", "best_row_match", "gower_distance", "load_csv",
    "prc", "prior_mode_baseline", "risk_class", "run", "swap_anonymize", "wilson_interval",
]
