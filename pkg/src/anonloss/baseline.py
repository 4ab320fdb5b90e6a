"""Non-member baseline predictor.

The baseline predicts the unknown attribute of held-out rows with a bagged
decision-tree ensemble trained on the rest of the original data. Trees are
induced by scikit-learn; voting is done here so that the rank score is the
fraction of trees agreeing with the majority label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from .dataset import TabularDataset, remove_targets

MAX_BLOCK_ROWS = 1000
BLOCK_FRACTION = 0.10


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 200
    min_split: int = 10
    min_leaf: int = 10
    n_jobs: int = 1

    def __post_init__(self) -> None:
        if self.n_trees < 1 or self.min_split < 2 or self.min_leaf < 1:
            raise ValueError("invalid forest hyperparameters")


# the classifier's stock settings, prone to memorizing duplicated rows
SKLEARN_DEFAULTS = ForestParams(n_trees=100, min_split=2, min_leaf=1)


@dataclass
class BaselineModel:
    trees: list
    classes: np.ndarray
    feature_columns: tuple[str, ...]
    label_column: str

    def vote(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Majority label and its vote share for every row of ``X``.

        Each tree must return indices into ``classes``. Ties go to the lowest
        index, which is the lowest label since ``classes`` is sorted.
        """
        n = X.shape[0]
        if len(self.classes) == 1 or not self.trees:
            return np.full(n, self.classes[0]), np.ones(n)
        votes = np.zeros((n, len(self.classes)), dtype=np.int64)
        rows = np.arange(n)
        for tree in self.trees:
            idx = np.asarray(tree.predict(X)).astype(np.int64)
            np.add.at(votes, (rows, idx), 1)
        best = votes.argmax(axis=1)
        share = votes[rows, best] / len(self.trees)
        return self.classes[best], share


def feature_matrix(ds: TabularDataset, columns: Sequence[str]) -> np.ndarray:
    """Categorical columns as integer codes, continuous columns raw."""
    if not columns:
        return np.zeros((len(ds), 1))
    return np.column_stack([ds.codes(c).astype(float) for c in columns])


def fit(train: TabularDataset, known: Sequence[str], unknown: str,
        params: ForestParams = ForestParams(), seed: int = 0) -> BaselineModel:
    if len(train) == 0:
        raise ValueError("empty training set")
    known = tuple(known)
    y = train.labels(unknown)
    classes = np.unique(y)
    if len(classes) == 1:
        return BaselineModel([], classes, known, unknown)
    forest = RandomForestClassifier(
        n_estimators=params.n_trees,
        min_samples_split=params.min_split,
        min_samples_leaf=params.min_leaf,
        max_features="sqrt",
        criterion="gini",
        bootstrap=True,
        random_state=seed,
        n_jobs=params.n_jobs,
    )
    forest.fit(feature_matrix(train, known), y)
    # forest.classes_ equals np.unique(y); estimators predict indices into it
    return BaselineModel(list(forest.estimators_), np.asarray(forest.classes_), known, unknown)


def predict_with_probability(model: BaselineModel, row: dict) -> tuple[int, float]:
    """Predict one row given as ``{column: encoded value}``."""
    missing = [c for c in model.feature_columns if c not in row]
    if missing:
        raise KeyError(f"row lacks feature columns {missing}")
    X = np.array([[float(row[c]) for c in model.feature_columns]]) if model.feature_columns else np.zeros((1, 1))
    values, share = model.vote(X)
    return int(values[0]), float(share[0])


def predict_rows(model: BaselineModel, rows: TabularDataset) -> tuple[np.ndarray, np.ndarray]:
    return model.vote(feature_matrix(rows, model.feature_columns))


class ForestBaseline:
    """Block-holdout forest baseline used by a measurement session."""

    def __init__(self, known: Sequence[str], unknown: str, params: ForestParams = ForestParams(),
                 seed: int = 0) -> None:
        self.known = tuple(known)
        self.unknown = unknown
        self.params = params
        self.seed = seed
        self.model: BaselineModel | None = None
        self._fits = 0

    def fit(self, train: TabularDataset) -> None:
        seed = int(np.random.SeedSequence([self.seed, self._fits]).generate_state(1)[0])
        self._fits += 1
        self.model = fit(train, self.known, self.unknown, self.params, seed)

    def predict(self, rows: TabularDataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.model is None:
            raise RuntimeError("baseline not fitted")
        values, share = predict_rows(self.model, rows)
        return values.astype(np.int64), share, np.ones(len(rows), dtype=bool)


# -- block holdout ---------------------------------------------------------


def block_size_for(n_rows: int) -> int:
    return max(1, min(MAX_BLOCK_ROWS, math.ceil(BLOCK_FRACTION * n_rows)))


@dataclass
class BlockPlan:
    order: np.ndarray
    block_size: int
    index: int = 0

    @classmethod
    def shuffled(cls, ds: TabularDataset, seed: int) -> "BlockPlan":
        rng = np.random.default_rng(seed)
        order = ds.row_ids[rng.permutation(len(ds))]
        return cls(order, block_size_for(len(ds)))

    @property
    def n_blocks(self) -> int:
        return math.ceil(len(self.order) / self.block_size)

    @property
    def exhausted(self) -> bool:
        return self.index >= self.n_blocks


def next_block(plan: BlockPlan, ds: TabularDataset) -> tuple[TabularDataset, TabularDataset]:
    """Advance the plan and return ``(holdout, training)``.

    Training excludes every row of every individual in the holdout block.
    """
    if plan.exhausted:
        raise StopIteration("block plan exhausted")
    lo = plan.index * plan.block_size
    ids = plan.order[lo:lo + plan.block_size]
    plan.index += 1
    holdout = ds.subset(ids)
    people = set(ds.individuals.loc[ids])
    training = remove_targets(ds, people)
    return holdout, training


# -- down-sampling ---------------------------------------------------------


@dataclass(frozen=True)
class SamplingPolicy:
    dominant_value: int | None = None
    keep_probability: float = 1.0

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "SamplingPolicy":
        """Down-sample a value held by more than half the rows to a 50% share."""
        if len(labels) == 0:
            return cls()
        values, counts = np.unique(labels, return_counts=True)
        top = int(np.argmax(counts))
        freq = counts[top] / len(labels)
        if freq <= 0.5:
            return cls()
        return cls(int(values[top]), (1.0 - freq) / freq)


def downsample_stream(labels: np.ndarray, policy: SamplingPolicy,
                      rng: np.random.Generator) -> Iterator[int]:
    """Yield positions into ``labels``, skipping dominant-value rows at random."""
    for i, v in enumerate(labels):
        if policy.dominant_value is not None and v == policy.dominant_value:
            if rng.random() >= policy.keep_probability:
                continue
        yield i


__all__ = [
    "BaselineModel", "BlockPlan", "ForestBaseline", "ForestParams", "SKLEARN_DEFAULTS",
    "SamplingPolicy", "block_size_for", "downsample_stream", "feature_matrix", "fit",
    "next_block", "predict_rows", "predict_with_probability",
]
