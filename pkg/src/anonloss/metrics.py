"""Precision, recall and the composite scores built from them.

Everything here is a pure function of its arguments. The composite of
precision and recall (PRC) weighs precision heavily until recall gets very
small, and the anonymity loss coefficient (ALC) compares the best attack PRC
against the best baseline PRC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

RISK_SAFE = "safe"
RISK_AT_RISK = "at_risk"
RISK_SERIOUS = "serious"
RISK_CLASSES = (RISK_SAFE, RISK_AT_RISK, RISK_SERIOUS)

AT_RISK_ALC = 0.5
SERIOUS_ALC = 0.75


@dataclass(frozen=True)
class Counts:
    """True predictions, false predictions and abstentions at one threshold."""

    T: int
    F: int
    A: int = 0

    def __post_init__(self) -> None:
        if self.T < 0 or self.F < 0 or self.A < 0:
            raise ValueError(f"counts must be non-negative, got {self}")

    @property
    def predictions(self) -> int:
        return self.T + self.F

    @property
    def attempts(self) -> int:
        return self.T + self.F + self.A


@dataclass(frozen=True)
class PrcParams:
    alpha: float = 3.0
    r_min: float = 0.0001
    z: float = 1.96
    target_ci_width: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.r_min < 1.0:
            raise ValueError("r_min must lie in (0, 1)")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.z < 0:
            raise ValueError("z must be non-negative")
        if self.target_ci_width <= 0:
            raise ValueError("target_ci_width must be positive")


@dataclass(frozen=True)
class PrecisionRecallMeasure:
    counts: Counts
    threshold: float
    p_meas: float
    p_lower: float
    p_upper: float
    p_prob: float
    recall: float
    prc: float

    @property
    def ci_width(self) -> float:
        return self.p_upper - self.p_lower


def wilson_interval(T: int, F: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for the proportion T / (T + F)."""
    n = T + F
    if n < 1:
        raise ValueError("no predictions")
    p = T / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = (z / denom) * math.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n))
    lower = max(0.0, center - half)
    upper = min(1.0, center + half)
    if z == 0:
        lower = upper = p
    return lower, upper


def measured_precision(c: Counts) -> float:
    if c.predictions < 1:
        raise ValueError("no predictions")
    return c.T / (c.T + c.F)


def probabilistic_precision(c: Counts, z: float = 1.96) -> float:
    """Midpoint of the Wilson interval."""
    lower, upper = wilson_interval(c.T, c.F, z)
    return lower + (upper - lower) / 2


def recall_random(c: Counts) -> float:
    """Recall over randomly selected attempts: predictions / attempts."""
    if c.attempts < 1:
        raise ValueError("no attempts")
    return (c.T + c.F) / c.attempts


def recall_whole_population(N: int, A: int, N_pre: int, D: int) -> float:
    """Recall of pre-targeted attempts relative to the whole population.

    N attempts with A abstentions, drawn from N_pre pre-targeted
    individuals out of D records.
    """
    if N < 1 or D < 1:
        raise ValueError("N and D must be at least 1")
    if not 0 <= A <= N:
        raise ValueError("abstentions must lie in [0, N]")
    if not 0 <= N_pre <= D:
        raise ValueError("pre-targeted count must lie in [0, D]")
    return (N - A) * N_pre / (N * D)


def recall_preselected(N: int, A: int) -> float:
    if N < 1:
        raise ValueError("N must be at least 1")
    if not 0 <= A <= N:
        raise ValueError("abstentions must lie in [0, N]")
    return (N - A) / N


def prc(P: float, R: float, params: PrcParams = PrcParams()) -> float:
    """Precision-recall coefficient.

    Above ``r_min`` the precision is discounted by
    ``1 - (log10 R / log10 r_min) ** alpha``; at or below it the score is R.
    The piecewise form is kept verbatim, including the jump at ``r_min``.
    """
    if R <= 0:
        raise ValueError("recall must be positive")
    if not 0.0 <= P <= 1.0:
        raise ValueError("precision must lie in [0, 1]")
    if R > 1.0:
        raise ValueError("recall must not exceed 1")
    if R > params.r_min:
        ratio = math.log10(R) / math.log10(params.r_min)
        return (1.0 - ratio**params.alpha) * P
    return R


def alc_abs(prc_atk: float, prc_base: float) -> float:
    return prc_atk - prc_base


def alc_rel(prc_atk: float, prc_base: float) -> float:
    if prc_base >= 1.0:
        raise ValueError("degenerate baseline: prc_base must be below 1")
    return (prc_atk - prc_base) / (1.0 - prc_base)


def f_beta(P: float, R: float, beta: float = 1.0) -> float:
    """Weighted harmonic mean of precision and recall.

    Returns 0.0 when both P and R are 0 (the ratio is undefined there).
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    b2 = beta * beta
    denom = b2 * P + R
    if denom == 0:
        return 0.0
    return (1 + b2) * P * R / denom


def make_measure(c: Counts, threshold: float, params: PrcParams = PrcParams()) -> PrecisionRecallMeasure:
    lower, upper = wilson_interval(c.T, c.F, params.z)
    p_prob = lower + (upper - lower) / 2
    recall = recall_random(c)
    return PrecisionRecallMeasure(
        counts=c,
        threshold=threshold,
        p_meas=measured_precision(c),
        p_lower=lower,
        p_upper=upper,
        p_prob=p_prob,
        recall=recall,
        prc=prc(p_prob, recall, params),
    )


def risk_class(alc: float | None) -> str:
    """Band an ALC value: below 0.5 safe, below 0.75 at risk, else serious."""
    if alc is None or math.isnan(alc) or alc < AT_RISK_ALC:
        return RISK_SAFE
    if alc < SERIOUS_ALC:
        return RISK_AT_RISK
    return RISK_SERIOUS
