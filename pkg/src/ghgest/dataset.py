"""Tabular data with explicit missingness, sector hierarchy and company keys.

Feature values live in a float matrix where MISSING cells hold NaN, but the
boolean ``mask`` (True = observed) is the authoritative record of which cells
are present. Categorical columns are stored as integer codes (as floats) whose
labels are interned in first-seen order and kept on the schema.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, IntegrityError

NUMERIC = "numeric"
CATEGORICAL = "categorical"

SECTOR_LEVELS = 4
KEY_COLUMNS = ("company_id", "fiscal_year")
TARGET_COLUMN = "target"

LEVEL1_SECTORS = (
    "Industrials",
    "Health Care",
    "Technology",
    "Financials",
    "Materials",
    "Real Estate",
    "Utilities",
    "Energy",
    "Consumer Staples",
    "Consumer Discretionary",
    "Communications",
)


def sector_columns(levels: int = SECTOR_LEVELS) -> list[str]:
    return [f"sector_l{i + 1}" for i in range(levels)]


@dataclass
class FeatureSchema:
    """Ordered feature columns plus interned category labels."""

    columns: list[tuple[str, str]]
    sector_levels: int = SECTOR_LEVELS
    categories: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        names = [c[0] for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("feature column names must be unique")
        for name, kind in self.columns:
            if kind not in (NUMERIC, CATEGORICAL):
                raise DataError(f"column {name!r}: unknown kind {kind!r}")
            if kind == CATEGORICAL:
                self.categories.setdefault(name, [])
        if not any(kind == NUMERIC for _, kind in self.columns):
            raise DataError("schema needs at least one numeric column")
        if self.sector_levels < 1:
            raise DataError("sector_levels must be positive")
        reserved = set(KEY_COLUMNS) | set(sector_columns(self.sector_levels))
        clash = reserved.intersection(names)
        if clash:
            raise DataError(f"feature names collide with reserved columns: {sorted(clash)}")

    @property
    def names(self) -> list[str]:
        return [c[0] for c in self.columns]

    @property
    def n_features(self) -> int:
        return len(self.columns)

    @property
    def is_categorical(self) -> np.ndarray:
        return np.array([kind == CATEGORICAL for _, kind in self.columns])

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"no feature column named {name!r}") from None

    def fingerprint(self) -> str:
        """Hash of column names and kinds; category labels are excluded."""
        payload = json.dumps([list(c) for c in self.columns])
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def copy(self) -> "FeatureSchema":
        return FeatureSchema(
            [tuple(c) for c in self.columns],
            self.sector_levels,
            {k: list(v) for k, v in self.categories.items()},
        )

    def to_dict(self) -> dict:
        return {
            "columns": [{"name": n, "kind": k} for n, k in self.columns],
            "sector_levels": self.sector_levels,
            "categories": self.categories,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureSchema":
        return cls(
            [(c["name"], c["kind"]) for c in doc["columns"]],
            int(doc.get("sector_levels", SECTOR_LEVELS)),
            {k: list(v) for k, v in doc.get("categories", {}).items()},
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Dataset:
    """Rows of features with keys, sector paths and an optional target.

    ``values`` is N x D float with NaN at MISSING cells; ``mask`` is N x D bool
    with True where the cell is observed. ``sector_path`` is an N x L array of
    sector codes (empty string where the level is unknown).
    """

    schema: FeatureSchema
    values: np.ndarray
    mask: np.ndarray
    company_id: np.ndarray
    fiscal_year: np.ndarray
    sector_path: np.ndarray
    target: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.values)
        if self.values.shape != (n, self.schema.n_features):
            raise DataError("values shape does not match schema")
        if self.mask.shape != self.values.shape or self.mask.dtype != bool:
            raise DataError("mask must be a boolean array shaped like values")
        for name in ("company_id", "fiscal_year", "sector_path"):
            if len(getattr(self, name)) != n:
                raise DataError(f"{name} length does not match row count")
        if self.target is not None and len(self.target) != n:
            raise DataError("target length does not match row count")
        if np.isnan(self.values[self.mask]).any():
            raise DataError("observed cells must not be NaN")
        for arr in (self.values, self.mask, self.company_id, self.fiscal_year,
                    self.sector_path, self.target):
            if arr is not None:
                arr.flags.writeable = False

    def __len__(self) -> int:
        return len(self.values)

    @property
    def labeled(self) -> bool:
        return self.target is not None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.index(name)]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.int64)
        return Dataset(
            self.schema,
            self.values[idx].copy(),
            self.mask[idx].copy(),
            self.company_id[idx].copy(),
            self.fiscal_year[idx].copy(),
            self.sector_path[idx].copy(),
            None if self.target is None else self.target[idx].copy(),
        )

    def with_mask(self, mask: np.ndarray) -> "Dataset":
        """Copy with a new observation mask; hidden cells become NaN."""
        mask = np.asarray(mask, dtype=bool)
        values = np.where(mask, self.values, np.nan)
        return replace(self, values=values, mask=mask.copy())

    def with_target(self, target) -> "Dataset":
        return replace(self, target=None if target is None else np.asarray(target, float).copy())

    @staticmethod
    def concat(parts: Sequence["Dataset"]) -> "Dataset":
        if not parts:
            raise DataError("nothing to concatenate")
        schema = parts[0].schema
        if any(p.schema.fingerprint() != schema.fingerprint() for p in parts):
            raise DataError("cannot concatenate datasets with different schemas")
        labeled = [p.target is not None for p in parts]
        if any(labeled) and not all(labeled):
            raise DataError("cannot mix labeled and unlabeled datasets")
        return Dataset(
            schema,
            np.concatenate([p.values for p in parts]),
            np.concatenate([p.mask for p in parts]),
            np.concatenate([p.company_id for p in parts]),
            np.concatenate([p.fiscal_year for p in parts]),
            np.concatenate([p.sector_path for p in parts]),
            np.concatenate([p.target for p in parts]) if all(labeled) else None,
        )

    def check_unique_keys(self) -> None:
        if self.target is None:
            return
        seen = set()
        for c, y in zip(self.company_id, self.fiscal_year):
            if (c, y) in seen:
                raise IntegrityError(f"duplicate labeled row for company {c!r}, year {y}")
            seen.add((c, y))


def make_dataset(schema, values, company_id, fiscal_year, sector_path, target=None) -> Dataset:
    """Build a Dataset from raw arrays, deriving the mask from NaNs."""
    values = np.asarray(values, dtype=float)
    mask = ~np.isnan(values)
    return Dataset(
        schema,
        values,
        mask,
        np.asarray(company_id, dtype=object),
        np.asarray(fiscal_year, dtype=int),
        np.asarray(sector_path, dtype=object),
        None if target is None else np.asarray(target, dtype=float),
    )


# --------------------------------------------------------------------- CSV I/O

def load_csv(path, schema: FeatureSchema, target_column: str | None = TARGET_COLUMN) -> Dataset:
    """Read a CSV file into a Dataset.

    Empty cells become MISSING. Categorical labels not yet known to the schema
    are appended to ``schema.categories`` so existing codes stay stable. A file
    that lacks ``target_column`` loads as unlabeled.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)

    pos = {name: i for i, name in enumerate(header)}
    sector_cols = sector_columns(schema.sector_levels)
    required = list(KEY_COLUMNS) + sector_cols + schema.names
    missing = [c for c in required if c not in pos]
    if missing:
        raise DataError(f"{path}: header lacks columns {missing}")
    labeled = target_column is not None and target_column in pos

    n, d = len(rows), schema.n_features
    values = np.full((n, d), np.nan)
    mask = np.zeros((n, d), dtype=bool)
    target = np.empty(n) if labeled else None
    company, year = [], []
    sectors = np.empty((n, schema.sector_levels), dtype=object)

    lookup = {name: {lab: i for i, lab in enumerate(schema.categories[name])}
              for name, kind in schema.columns if kind == CATEGORICAL}
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i + 1} has {len(row)} cells, expected {len(header)}")
        company.append(row[pos["company_id"]])
        try:
            year.append(int(row[pos["fiscal_year"]]))
        except ValueError:
            raise DataError(f"{path}: row {i + 1}, column fiscal_year: not an integer") from None
        for lvl, col in enumerate(sector_cols):
            sectors[i, lvl] = row[pos[col]]
        for j, (name, kind) in enumerate(schema.columns):
            cell = row[pos[name]]
            if cell == "":
                continue
            if kind == NUMERIC:
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {i + 1}, column {name}: cannot parse {cell!r}") from None
                if math.isnan(v):
                    raise DataError(f"{path}: row {i + 1}, column {name}: NaN is not a value")
            else:
                codes = lookup[name]
                if cell not in codes:
                    codes[cell] = len(codes)
                    schema.categories[name].append(cell)
                v = float(codes[cell])
            values[i, j] = v
            mask[i, j] = True
        if labeled:
            cell = row[pos[target_column]]
            try:
                target[i] = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {i + 1}, column {target_column}: cannot parse {cell!r}") from None
            if not target[i] >= 0:
                raise DataError(f"{path}: row {i + 1}: target must be nonnegative")

    data = Dataset(schema, values, mask, np.array(company, dtype=object),
                   np.array(year, dtype=int), sectors, target)
    data.check_unique_keys()
    return data


def infer_schema(path, sector_levels: int = SECTOR_LEVELS, exclude=()) -> FeatureSchema:
    """Schema from a CSV header: columns with any non-numeric cell are categorical.

    Key, sector and ``exclude`` columns (targets) are skipped.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        skip = set(KEY_COLUMNS) | set(sector_columns(sector_levels)) | set(exclude)
        cols = [(i, name) for i, name in enumerate(header) if name not in skip]
        numeric = {i: True for i, _ in cols}
        for row in reader:
            for i, _ in cols:
                if numeric[i] and i < len(row) and row[i] != "":
                    try:
                        float(row[i])
                    except ValueError:
                        numeric[i] = False
    return FeatureSchema([(name, NUMERIC if numeric[i] else CATEGORICAL) for i, name in cols], sector_levels)


def save_csv(data: Dataset, path, target_column: str = TARGET_COLUMN,
             extra_columns: dict[str, Iterable] | None = None) -> None:
    """Write a Dataset in the format read by :func:`load_csv`.

    Floats use ``repr`` so a save/load round trip is bit-exact.
    """
    schema = data.schema
    sector_cols = sector_columns(schema.sector_levels)
    header = list(KEY_COLUMNS) + sector_cols + schema.names
    extra = {k: list(v) for k, v in (extra_columns or {}).items()}
    if data.target is not None:
        header.append(target_column)
    header += list(extra)
    kinds = [kind for _, kind in schema.columns]
    labels = [schema.categories.get(name) for name in schema.names]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(data)):
            row = [str(data.company_id[i]), str(int(data.fiscal_year[i]))]
            row += [str(s) for s in data.sector_path[i]]
            for j in range(schema.n_features):
                if not data.mask[i, j]:
                    row.append("")
                elif kinds[j] == CATEGORICAL:
                    row.append(labels[j][int(data.values[i, j])])
                else:
                    row.append(repr(float(data.values[i, j])))
            if data.target is not None:
                row.append(repr(float(data.target[i])))
            row += [repr(float(v)) if isinstance(v, float) else str(v) for v in (col[i] for col in extra.values())]
            writer.writerow(row)


# ------------------------------------------------------------ cross-validation

@dataclass(frozen=True)
class FoldAssignment:
    fold_of_company: dict
    k: int

    def fold_of_rows(self, data: Dataset) -> np.ndarray:
        return np.array([self.fold_of_company[c] for c in data.company_id], dtype=int)


def grouped_kfold(data: Dataset, k: int = 10, seed: int = 0) -> FoldAssignment:
    """Assign whole companies to folds: seeded shuffle, then round-robin."""
    if k < 2:
        raise DataError("k must be at least 2")
    companies = sorted(set(data.company_id.tolist()))
    if len(companies) < k:
        raise DataError(f"{len(companies)} companies cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(companies))
    return FoldAssignment({companies[c]: pos % k for pos, c in enumerate(order)}, k)


def split_train_valid_test(data: Dataset, folds: FoldAssignment, test_fold: int):
    """Return (train, valid, test); validation is fold ``test_fold + 1 mod K``."""
    if not 0 <= test_fold < folds.k:
        raise DataError(f"test_fold must be in [0, {folds.k})")
    valid_fold = (test_fold + 1) % folds.k
    row_fold = folds.fold_of_rows(data)
    test = np.flatnonzero(row_fold == test_fold)
    valid = np.flatnonzero(row_fold == valid_fold)
    train = np.flatnonzero((row_fold != test_fold) & (row_fold != valid_fold))
    return data.take(train), data.take(valid), data.take(test)
