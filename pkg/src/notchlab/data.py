"""Loan-record schema, columnar datasets, CSV I/O, encoding and folds."""

from __future__ import annotations

import csv
import enum
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

RATING_MIN, RATING_MAX = 1, 15
# ratings observed in practice; 1 never occurs
CLASSES = np.arange(2, 16)
N_CLASSES = len(CLASSES)

TARGET = "final_risk_rating"
SCORECARD = "prelim_risk_rating"
ID_COLUMNS = ("manager_id", "customer_id", "year")

NAICS_SECTORS = (
    "11", "21", "22", "23", "31", "32", "33", "42", "44", "45", "48", "49",
    "51", "52", "53", "54", "55", "56", "61", "62", "71", "72", "81", "92",
)


class DataError(ValueError):
    """Malformed input data; message carries row/column context."""


class FeatureKind(str, enum.Enum):
    QUANTITATIVE = "Quantitative"
    QUALITATIVE = "Qualitative"
    CATEGORICAL = "Categorical"
    RATING = "Rating"

    @property
    def is_discrete(self) -> bool:
        return self in (FeatureKind.QUALITATIVE, FeatureKind.CATEGORICAL)


@dataclass(frozen=True)
class Column:
    name: str
    kind: FeatureKind
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind.is_discrete:
            if not self.levels:
                raise ValueError(f"column {self.name!r} needs at least one level")
            if len(set(self.levels)) != len(self.levels):
                raise ValueError(f"column {self.name!r} has duplicate levels")
        elif self.levels:
            raise ValueError(f"column {self.name!r} is {self.kind.value}; levels must be empty")


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("column names must be unique")
        clash = set(names) & set(ID_COLUMNS)
        if clash:
            raise ValueError(f"reserved column names used: {sorted(clash)}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def __len__(self):
        return len(self.columns)

    def __contains__(self, name):
        return any(c.name == name for c in self.columns)

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def predictors(self, include_scorecard: bool = True, drop: Iterable[str] = ()) -> list[str]:
        """Predictor column names in schema order (the target is never a predictor)."""
        drop = set(drop)
        unknown = drop - set(self.names)
        if unknown:
            raise KeyError(f"unknown columns: {sorted(unknown)}")
        if not include_scorecard:
            drop.add(SCORECARD)
        return [n for n in self.names if n != TARGET and n not in drop]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for c in self.columns:
            h.update(f"{c.name}|{c.kind.value}|{','.join(c.levels)}\n".encode())
        return h.hexdigest()


_ABC = ("A", "B", "C")
_YN = ("Y", "N")


def default_schema(n_industries: int = 24) -> Schema:
    """The 27-column loan-record schema, in the published variable order."""
    if n_industries < 1:
        raise ValueError("n_industries must be >= 1")
    if n_industries <= len(NAICS_SECTORS):
        industries = NAICS_SECTORS[:n_industries]
    else:
        industries = NAICS_SECTORS + tuple(f"X{i:02d}" for i in range(n_industries - len(NAICS_SECTORS)))
    C, Q, N, R = (FeatureKind.CATEGORICAL, FeatureKind.QUALITATIVE,
                  FeatureKind.QUANTITATIVE, FeatureKind.RATING)
    cols = [
        Column("primary_exposure_type", C, ("LOC", "TERM", "LEASE", "SBLC")),
        Column("pct_rev_3_large_cus", C, _ABC),
        Column("public_private_cd", C, ("PUB", "PRV")),
        Column("snc_indicator", C, _YN),
        Column("not_for_profit_ind", C, _YN),
        Column("revolving_ind", C, _YN),
        Column("lgd_secured_or_unsecured", C, ("SPEC", "BLNK", "EQTY", "SWM", "REV", "UNSEC")),
        Column("industry", C, industries),
        Column("access_outside_capital", Q, _ABC),
        Column("level_waiver_covenant_mod", Q, ("A", "B", "C", "D")),
        Column("management_quality", Q, ("A", "B", "C", "D", "E", "F")),
        Column("market_outlook_of_borrower", Q, _ABC),
        Column("mgmt_resp_adverse_conditons", Q, ("A", "B", "C", "D", "E", "F")),
        Column("strength_sor_prevent_default", Q, _ABC),
        Column("vulnerability_to_changes", Q, _ABC),
        Column("net_sales", N),
        Column("net_profit_margin", N),
        Column("cashoprofit_to_sales", N),
        Column("total_assets", N),
        Column("total_laib_by_tang_net_worth", N),
        Column("acf", N),
        Column("total_debt_to_cap", N),
        Column("total_debt_to_acf", N),
        Column("end_cash_equv_by_tot_liab", N),
        Column("net_profit", N),
        Column(SCORECARD, R),
        Column(TARGET, R),
    ]
    return Schema(tuple(cols))


@dataclass(frozen=True)
class LoanRecord:
    values: dict
    manager_id: str
    customer_id: str
    year: int


class Dataset:
    """Immutable columnar table of loan records.

    Discrete columns are stored as integer codes into the schema levels,
    quantitative columns as float64 and ratings as int64.
    """

    def __init__(self, schema: Schema, columns: dict, manager_id, customer_id, year):
        self.schema = schema
        n = len(year)
        cols = {}
        for c in schema.columns:
            a = np.asarray(columns[c.name])
            if len(a) != n:
                raise ValueError(f"column {c.name!r} has length {len(a)}, expected {n}")
            if c.kind.is_discrete:
                a = a.astype(np.int64)
                if n and (a.min() < 0 or a.max() >= len(c.levels)):
                    raise DataError(f"column {c.name!r}: code outside level range")
            elif c.kind is FeatureKind.RATING:
                a = a.astype(np.int64)
                if n and (a.min() < RATING_MIN or a.max() > RATING_MAX):
                    raise DataError(f"column {c.name!r}: rating outside [{RATING_MIN}, {RATING_MAX}]")
            else:
                a = a.astype(np.float64)
                if not np.all(np.isfinite(a)):
                    raise DataError(f"column {c.name!r}: non-finite value")
            a.flags.writeable = False
            cols[c.name] = a
        self._cols = cols
        self.manager_id = np.asarray(manager_id, dtype=str)
        self.customer_id = np.asarray(customer_id, dtype=str)
        self.year = np.asarray(year, dtype=np.int64)
        for a in (self.manager_id, self.customer_id, self.year):
            a.flags.writeable = False

    @property
    def n(self) -> int:
        return len(self.year)

    def __len__(self):
        return self.n

    def __getitem__(self, name: str) -> np.ndarray:
        return self._cols[name]

    @property
    def labels(self) -> np.ndarray:
        return self._cols[TARGET]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.schema, {k: v[idx] for k, v in self._cols.items()},
                       self.manager_id[idx], self.customer_id[idx], self.year[idx])

    def with_columns(self, **replacements) -> "Dataset":
        cols = dict(self._cols)
        cols.update(replacements)
        return Dataset(self.schema, cols, self.manager_id, self.customer_id, self.year)

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Raw (n, len(names)) float matrix; discrete columns hold level codes."""
        out = np.empty((self.n, len(names)), dtype=np.float64)
        for j, name in enumerate(names):
            out[:, j] = self._cols[name]
        return out

    def record(self, i: int) -> LoanRecord:
        vals = {}
        for c in self.schema.columns:
            v = self._cols[c.name][i]
            vals[c.name] = c.levels[v] if c.kind.is_discrete else v.item()
        return LoanRecord(vals, str(self.manager_id[i]), str(self.customer_id[i]), int(self.year[i]))

    @classmethod
    def from_records(cls, schema: Schema, records: Sequence[LoanRecord]) -> "Dataset":
        cols = {}
        for c in schema.columns:
            if c.kind.is_discrete:
                lookup = {lv: k for k, lv in enumerate(c.levels)}
                try:
                    cols[c.name] = [lookup[r.values[c.name]] for r in records]
                except KeyError as exc:
                    raise DataError(f"column {c.name!r}: unknown level {exc.args[0]!r}") from None
            else:
                cols[c.name] = [r.values[c.name] for r in records]
        return cls(schema, cols, [r.manager_id for r in records],
                   [r.customer_id for r in records], [r.year for r in records])

    def equals(self, other: "Dataset") -> bool:
        if self.schema != other.schema or self.n != other.n:
            return False
        return (all(np.array_equal(self[c], other[c]) for c in self.schema.names)
                and np.array_equal(self.manager_id, other.manager_id)
                and np.array_equal(self.customer_id, other.customer_id)
                and np.array_equal(self.year, other.year))


def _parse_rating(cell: str, row: int, name: str) -> int:
    try:
        v = int(cell)
    except ValueError:
        raise DataError(f"row {row}, column {name!r}: rating {cell!r} is not an integer") from None
    if not RATING_MIN <= v <= RATING_MAX:
        raise DataError(f"row {row}, column {name!r}: rating {v} outside [{RATING_MIN}, {RATING_MAX}]")
    return v


def read_csv(path, schema: Schema | None = None) -> Dataset:
    """Parse a portfolio CSV; rows are numbered from 1 after the header."""
    schema = schema or default_schema()
    path = Path(path)
    expected = schema.names + list(ID_COLUMNS)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if sorted(header) != sorted(expected) or len(header) != len(expected):
            missing = sorted(set(expected) - set(header))
            extra = sorted(set(header) - set(expected))
            raise DataError(f"{path}: header mismatch (missing {missing}, unexpected {extra})")
        pos = {name: header.index(name) for name in expected}
        lookups = {c.name: {lv: k for k, lv in enumerate(c.levels)}
                   for c in schema.columns if c.kind.is_discrete}
        cols = {name: [] for name in schema.names}
        mgr, cust, yr = [], [], []
        for row, cells in enumerate(reader, start=1):
            if len(cells) != len(header):
                raise DataError(f"row {row}: expected {len(header)} cells, got {len(cells)}")
            for c in schema.columns:
                cell = cells[pos[c.name]].strip()
                if cell == "":
                    raise DataError(f"row {row}, column {c.name!r}: missing value")
                if c.kind.is_discrete:
                    try:
                        cols[c.name].append(lookups[c.name][cell])
                    except KeyError:
                        raise DataError(f"row {row}, column {c.name!r}: unknown level {cell!r} "
                                        f"(expected one of {list(c.levels)})") from None
                elif c.kind is FeatureKind.RATING:
                    cols[c.name].append(_parse_rating(cell, row, c.name))
                else:
                    try:
                        v = float(cell)
                    except ValueError:
                        raise DataError(f"row {row}, column {c.name!r}: {cell!r} is not numeric") from None
                    if not math.isfinite(v):
                        raise DataError(f"row {row}, column {c.name!r}: non-finite value")
                    cols[c.name].append(v)
            mgr.append(cells[pos["manager_id"]])
            cust.append(cells[pos["customer_id"]])
            try:
                yr.append(int(cells[pos["year"]]))
            except ValueError:
                raise DataError(f"row {row}, column 'year': {cells[pos['year']]!r} is not an integer") from None
    return Dataset(schema, cols, mgr, cust, yr)


def write_csv(ds: Dataset, path) -> None:
    path = Path(path)
    schema = ds.schema
    try:
        fh = path.open("w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.names + list(ID_COLUMNS))
        formatted = []
        for c in schema.columns:
            a = ds[c.name]
            if c.kind.is_discrete:
                formatted.append([c.levels[v] for v in a])
            elif c.kind is FeatureKind.RATING:
                formatted.append([str(v) for v in a.tolist()])
            else:
                formatted.append([repr(v) for v in a.tolist()])
        formatted.append(ds.manager_id.tolist())
        formatted.append(ds.customer_id.tolist())
        formatted.append([str(v) for v in ds.year.tolist()])
        w.writerows(zip(*formatted))


def class_index(ratings) -> np.ndarray:
    """Map ratings 2..15 to class indices 0..13."""
    r = np.asarray(ratings, dtype=np.int64)
    if r.size and (r.min() < CLASSES[0] or r.max() > CLASSES[-1]):
        raise DataError(f"labels must lie in [{CLASSES[0]}, {CLASSES[-1]}]")
    return r - CLASSES[0]


# ---------------------------------------------------------------- encoding

@dataclass
class Encoder:
    """One-hot for discrete columns, z-scores for quantitative and rating columns."""

    schema: Schema
    columns: list[str]
    means: dict = field(default_factory=dict)
    scales: dict = field(default_factory=dict)

    @classmethod
    def fit(cls, ds: Dataset, columns: Sequence[str]) -> "Encoder":
        enc = cls(ds.schema, list(columns))
        for name in enc.columns:
            col = ds.schema.column(name)
            if not col.kind.is_discrete:
                x = ds[name].astype(np.float64)
                mu = float(x.mean()) if len(x) else 0.0
                sd = float(x.std()) if len(x) else 0.0
                enc.means[name] = mu
                enc.scales[name] = sd
        return enc

    @property
    def labels(self) -> list[str]:
        out = []
        for name in self.columns:
            col = self.schema.column(name)
            if col.kind.is_discrete:
                out.extend(f"{name}={lv}" for lv in col.levels)
            else:
                out.append(name)
        return out

    def transform(self, ds: Dataset) -> np.ndarray:
        blocks = []
        for name in self.columns:
            col = ds.schema.column(name)
            if col.kind.is_discrete:
                blocks.append(np.eye(len(col.levels))[ds[name]])
            else:
                x = ds[name].astype(np.float64)
                sd = self.scales[name]
                # constant columns map to zeros
                z = (x - self.means[name]) / sd if sd > 0 else np.zeros_like(x)
                blocks.append(z[:, None])
        if not blocks:
            return np.zeros((ds.n, 0))
        return np.hstack(blocks)


def one_hot_encode(ds: Dataset, drop_columns: Iterable[str] = ()) -> tuple[np.ndarray, list[str]]:
    """Encode every predictor except ``drop_columns`` (the target is always excluded)."""
    names = ds.schema.predictors(include_scorecard=True, drop=drop_columns)
    enc = Encoder.fit(ds, names)
    return enc.transform(ds), enc.labels


# ------------------------------------------------------------------- folds

@dataclass(frozen=True)
class FoldAssignment:
    fold_of: np.ndarray
    k: int

    def test_index(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == f)

    def train_index(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != f)

    def splits(self):
        for f in range(self.k):
            yield f, self.train_index(f), self.test_index(f)


def stratified_kfold(ds_or_labels, k: int, seed: int) -> FoldAssignment:
    """Folds stratified by final rating; per-class fold counts differ by at most one."""
    y = ds_or_labels.labels if isinstance(ds_or_labels, Dataset) else np.asarray(ds_or_labels)
    n = len(y)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of records ({n})")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    offset = 0
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        fold_of[idx] = (offset + np.arange(len(idx))) % k
        # rotate so the leftover records of each class land on different folds
        offset = (offset + len(idx)) % k
    return FoldAssignment(fold_of, k)


def grouped_kfold(ds: Dataset, k: int, seed: int) -> FoldAssignment:
    """Folds that keep every customer's rating events together."""
    customers = np.unique(ds.customer_id)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(customers):
        raise ValueError(f"k={k} exceeds the number of customers ({len(customers)})")
    rng = np.random.default_rng(seed)
    order = customers[rng.permutation(len(customers))]
    fold_for = {c: i % k for i, c in enumerate(order)}
    return FoldAssignment(np.array([fold_for[c] for c in ds.customer_id], dtype=np.int64), k)
