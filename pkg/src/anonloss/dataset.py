"""Tabular datasets: CSV ingestion, schema inference, encoding and the
swap-based anonymizer used for experiments.

A :class:`TabularDataset` keeps the decoded values in a pandas frame indexed
by a stable row id. Categorical columns get an integer code per distinct
value, and every continuous column gets a companion column of equal-width
bin indices so it can serve as a ``pred=value`` unknown attribute.
Anonymized tables are encoded against the original's schema so that codes
and bins line up between the two.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"

CONTINUOUS_DISTINCT_THRESHOLD = 20
DEFAULT_BINS = 20
MISSING_TOKEN = "<missing>"


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    distinct_count: int
    value_range: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.kind not in (CATEGORICAL, CONTINUOUS):
            raise ValueError(f"unknown column kind {self.kind!r}")
        if self.kind == CONTINUOUS:
            if self.value_range is None:
                raise ValueError(f"continuous column {self.name!r} needs a value range")
            if self.value_range[0] > self.value_range[1]:
                raise ValueError(f"column {self.name!r}: min exceeds max")

    @property
    def is_continuous(self) -> bool:
        return self.kind == CONTINUOUS


@dataclass(frozen=True)
class AnonymizationConfig:
    swap_fraction: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.swap_fraction <= 1.0:
            raise ValueError("swap_fraction must lie in [0, 1]")


def _sort_key(v):
    # numbers before strings, each in natural order
    if isinstance(v, (int, float, np.integer, np.floating)):
        return (0, float(v), "")
    return (1, 0.0, str(v))


class TabularDataset:
    """Immutable encoded table.

    ``frame`` holds decoded values indexed by row id. ``individuals`` maps
    each row id to the individual it belongs to (by default the row id
    itself); removal of a target always removes every row of that
    individual.
    """

    def __init__(
        self,
        frame: pd.DataFrame,
        schema: Iterable[ColumnSchema] | None = None,
        encoding_maps: Mapping[str, Mapping[object, int]] | None = None,
        bins: int = DEFAULT_BINS,
        individuals: pd.Series | None = None,
    ) -> None:
        if bins < 2:
            raise ValueError("bins must be >= 2")
        frame = frame.copy()
        if frame.index.has_duplicates:
            raise ValueError("row ids must be unique")
        self._frame = frame
        self._bins = bins
        self._schema = tuple(schema) if schema is not None else infer_schema(frame)
        names = [c.name for c in self._schema]
        if list(frame.columns) != names:
            raise ValueError("schema columns do not match frame columns")
        maps = {k: dict(v) for k, v in (encoding_maps or {}).items()}
        for col in self._schema:
            if col.is_continuous:
                continue
            m = maps.setdefault(col.name, {})
            unseen = [v for v in pd.unique(frame[col.name]) if v not in m]
            for v in sorted(unseen, key=_sort_key):
                m[v] = len(m)
        self._maps = maps
        self._decoders = {k: {c: v for v, c in m.items()} for k, m in maps.items()}
        if individuals is None:
            individuals = pd.Series(frame.index, index=frame.index)
        else:
            individuals = individuals.loc[frame.index]
        self._individuals = individuals
        self._codes: dict[str, np.ndarray] = {}
        self._bin_cache: dict[str, np.ndarray] = {}

    # -- accessors -------------------------------------------------------

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame.copy()

    @property
    def schema(self) -> tuple[ColumnSchema, ...]:
        return self._schema

    @property
    def columns(self) -> list[str]:
        return [c.name for c in self._schema]

    @property
    def encoding_maps(self) -> dict[str, dict[object, int]]:
        return {k: dict(v) for k, v in self._maps.items()}

    @property
    def bins(self) -> int:
        return self._bins

    @property
    def row_ids(self) -> np.ndarray:
        return self._frame.index.to_numpy()

    @property
    def individuals(self) -> pd.Series:
        return self._individuals.copy()

    def __len__(self) -> int:
        return len(self._frame)

    def column(self, name: str) -> ColumnSchema:
        for c in self._schema:
            if c.name == name:
                return c
        raise KeyError(name)

    def has_column(self, name: str) -> bool:
        return name in self._frame.columns

    def values(self, name: str) -> np.ndarray:
        return self._frame[name].to_numpy()

    def encode(self, name: str, value) -> int:
        return self._maps[name][value]

    def decode(self, name: str, code: int):
        return self._decoders[name][int(code)]

    def codes(self, name: str) -> np.ndarray:
        """Integer codes for a categorical column, raw floats for a continuous one."""
        if name not in self._codes:
            col = self.column(name)
            raw = self._frame[name]
            if col.is_continuous:
                arr = raw.to_numpy(dtype=float)
            else:
                m = self._maps[name]
                arr = np.fromiter((m[v] for v in raw), dtype=np.int64, count=len(raw))
            arr.setflags(write=False)
            self._codes[name] = arr
        return self._codes[name]

    def companion(self, name: str) -> np.ndarray:
        """Bin indices of a continuous column (equal width over the schema range)."""
        col = self.column(name)
        if not col.is_continuous:
            raise ValueError(f"{name!r} is categorical and has no discretized companion")
        if name not in self._bin_cache:
            arr = bin_indices(self.codes(name), col.value_range, self._bins)
            arr.setflags(write=False)
            self._bin_cache[name] = arr
        return self._bin_cache[name]

    def labels(self, name: str) -> np.ndarray:
        """The column as a ``pred=value`` target: codes or bin indices."""
        if self.column(name).is_continuous:
            return self.companion(name)
        return self.codes(name)

    def decode_label(self, name: str, label: int):
        if self.column(name).is_continuous:
            return int(label)
        return self.decode(name, label)

    def label_space(self, name: str) -> list[int]:
        if self.column(name).is_continuous:
            return list(range(self._bins))
        return sorted(self._maps[name].values())

    def row_position(self, row_id) -> int:
        return int(self._frame.index.get_loc(row_id))

    # -- derivation ------------------------------------------------------

    def with_frame(self, frame: pd.DataFrame, individuals: pd.Series | None = None) -> "TabularDataset":
        """New dataset on ``frame`` sharing this one's schema and encodings."""
        if individuals is None and frame.index.isin(self._individuals.index).all():
            individuals = self._individuals
        return TabularDataset(frame, self._schema, self._maps, self._bins, individuals)

    def subset(self, row_ids) -> "TabularDataset":
        return self.with_frame(self._frame.loc[row_ids])

    def like(self, other_frame: pd.DataFrame) -> "TabularDataset":
        """Encode a (possibly partial) table against this dataset's schema.

        Columns are matched by name; columns unknown to this schema are
        dropped. Continuous ranges stay those of this dataset, so bin indices
        line up with the original.
        """
        cols = [c for c in self._schema if c.name in other_frame.columns]
        frame = other_frame[[c.name for c in cols]].copy()
        for c in cols:
            if c.is_continuous:
                frame[c.name] = pd.to_numeric(frame[c.name])
        maps = {c.name: self._maps[c.name] for c in cols if not c.is_continuous}
        return TabularDataset(frame, cols, maps, self._bins)

    def to_csv(self, path: str | Path) -> None:
        self._frame.to_csv(path, index=False, lineterminator="\n")


# -- schema inference ------------------------------------------------------


def _is_number(x) -> bool:
    return isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool)


def infer_schema(frame: pd.DataFrame, threshold: int = CONTINUOUS_DISTINCT_THRESHOLD) -> tuple[ColumnSchema, ...]:
    schema = []
    for name in frame.columns:
        s = frame[name]
        distinct = int(s.nunique(dropna=False))
        numeric = len(s) > 0 and all(_is_number(v) for v in s)
        if numeric and distinct > threshold:
            vals = s.to_numpy(dtype=float)
            schema.append(ColumnSchema(str(name), CONTINUOUS, distinct, (float(vals.min()), float(vals.max()))))
        else:
            schema.append(ColumnSchema(str(name), CATEGORICAL, distinct))
    return tuple(schema)


def bin_indices(values: np.ndarray, value_range: tuple[float, float], bins: int) -> np.ndarray:
    lo, hi = value_range
    width = (hi - lo) / bins
    if width <= 0:
        return np.zeros(len(values), dtype=np.int64)
    idx = np.floor((np.asarray(values, dtype=float) - lo) / width).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def _parse_cell(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        f = float(text)
    except ValueError:
        return text
    return f if math.isfinite(f) else text


def from_records(header: list[str], rows: list[list[str]], id_column: str | None = None,
                 bins: int = DEFAULT_BINS) -> TabularDataset:
    """Build a dataset from raw string cells (the CSV path without the file)."""
    if not rows:
        raise ValueError("empty table")
    columns: dict[str, list] = {}
    continuous: set[str] = set()
    for j, name in enumerate(header):
        raw = [r[j] for r in rows]
        if name == id_column:
            columns[name] = raw
            continue
        parsed = [_parse_cell(v) if v != "" else None for v in raw]
        present = [v for v in parsed if v is not None]
        numeric = bool(present) and all(_is_number(v) for v in present)
        if numeric and len(set(present)) > CONTINUOUS_DISTINCT_THRESHOLD:
            continuous.add(name)
            columns[name] = parsed
        elif numeric:
            columns[name] = [MISSING_TOKEN if v is None else v for v in parsed]
        else:
            columns[name] = [MISSING_TOKEN if v == "" else v for v in raw]
    frame = pd.DataFrame(columns, columns=header)
    if id_column is not None and id_column not in frame.columns:
        raise ValueError(f"id column {id_column!r} not in header")
    if continuous:
        missing = frame[sorted(continuous)].isna().any(axis=1)
        if missing.any():
            logger.warning("dropping %d rows with missing continuous values", int(missing.sum()))
            frame = frame[~missing].reset_index(drop=True)
    if len(frame) == 0:
        raise ValueError("empty table")
    ids = frame.pop(id_column) if id_column is not None else None
    for name in frame.columns:
        vals = frame[name].tolist()
        if all(_is_number(v) for v in vals):
            if all(float(v).is_integer() for v in vals):
                frame[name] = np.asarray(vals, dtype=np.int64)
            else:
                frame[name] = np.asarray(vals, dtype=float)
        else:
            frame[name] = pd.Series(vals, dtype=object)
    return TabularDataset(frame, infer_schema(frame), bins=bins, individuals=ids)


def load_csv(path: str | Path, id_column: str | None = None, bins: int = DEFAULT_BINS,
             encoding: str = "utf-8") -> TabularDataset:
    """Read a headed, rectangular CSV file into a :class:`TabularDataset`."""
    try:
        with open(path, newline="", encoding=encoding) as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError("empty table") from None
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise ValueError(f"ragged row at line {lineno}: expected {len(header)} fields, got {len(row)}")
                rows.append(row)
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc
    return from_records(header, rows, id_column=id_column, bins=bins)


# -- operations ------------------------------------------------------------


def discretize(ds: TabularDataset, bins: int = DEFAULT_BINS) -> TabularDataset:
    """Return ``ds`` with companion bins recomputed at the given granularity."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    return TabularDataset(ds.frame, ds.schema, ds.encoding_maps, bins, ds.individuals)


def remove_targets(ds: TabularDataset, ids: Iterable) -> TabularDataset:
    """Drop every row belonging to the given individuals."""
    ids = set(ids)
    if not ids:
        return ds
    individuals = ds.individuals
    known = set(individuals.unique())
    missing = ids - known
    if missing:
        raise KeyError(f"unknown individual ids: {sorted(missing, key=str)[:5]}")
    keep = ~individuals.isin(ids).to_numpy()
    return ds.subset(ds.row_ids[keep])


def swap_anonymize(ds: TabularDataset, cfg: AnonymizationConfig) -> TabularDataset:
    """Permute a random ``swap_fraction`` of the cells within each column.

    Columns are handled independently, so marginals are preserved exactly
    but cross-column links are broken for the swapped cells.
    """
    n = len(ds)
    rng = np.random.default_rng(cfg.seed)
    k = math.ceil(cfg.swap_fraction * n)
    frame = ds.frame
    if k < 2:
        return ds.with_frame(frame)
    for name in ds.columns:
        cells = rng.choice(n, size=k, replace=False)
        perm = rng.permutation(cells)
        col = frame[name].to_numpy().copy()
        col[cells] = col[perm]
        frame[name] = col
    return ds.with_frame(frame)


def replicate_records(ds: TabularDataset, ids: Iterable, k: int) -> TabularDataset:
    """Append ``k`` copies of each named row under fresh row ids.

    Copies belong to new individuals, as a dependent but distinct person
    would.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    ids = list(ids)
    frame = ds.frame
    missing = [i for i in ids if i not in frame.index]
    if missing:
        raise KeyError(f"unknown row ids: {missing[:5]}")
    if k == 0 or not ids:
        return ds
    start = int(max(frame.index)) + 1
    reps = pd.concat([frame.loc[ids]] * k)
    reps.index = pd.RangeIndex(start, start + len(reps))
    new = pd.concat([frame, reps])
    individuals = pd.concat([ds.individuals, pd.Series(reps.index, index=reps.index)])
    return TabularDataset(new, ds.schema, ds.encoding_maps, ds.bins, individuals)
