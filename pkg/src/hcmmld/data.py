"""Schema-driven ingestion of mixed categorical / continuous tables.

Categorical levels are coded ``1..d_j`` by their position in the schema's
level list; ``0`` marks a missing categorical cell and ``nan`` a missing
continuous cell. Neither sentinel is ever read by a likelihood: every model
routine consults the masks ``Rx`` / ``Ry`` first.
"""

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .errors import DataError, SchemaError

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"
SEMICONTINUOUS = "semicontinuous"
KINDS = (CATEGORICAL, CONTINUOUS, SEMICONTINUOUS)

# Indicator levels for the zero / nonzero part of a semicontinuous column.
INDICATOR_LEVELS = ("zero", "nonzero")
INDICATOR_SUFFIX = "__nonzero"


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    levels: tuple = ()
    missing: str = ""


@dataclass(frozen=True)
class Schema:
    """Ordered column declarations plus the file delimiter."""

    columns: tuple
    delimiter: str = ","

    def __post_init__(self):
        if not self.columns:
            raise SchemaError("schema must declare at least one column")
        seen = set()
        for col in self.columns:
            if col.name in seen:
                raise SchemaError(f"duplicate column name {col.name!r}")
            seen.add(col.name)
            if col.kind not in KINDS:
                raise SchemaError(f"column {col.name!r}: unknown kind {col.kind!r}")
            if col.kind == CATEGORICAL:
                if not col.levels:
                    raise SchemaError(f"column {col.name!r}: categorical needs levels")
                if len(set(col.levels)) != len(col.levels):
                    raise SchemaError(f"column {col.name!r}: duplicate level labels")
                if col.missing in col.levels:
                    raise SchemaError(f"column {col.name!r}: missing token is also a level")

    @property
    def names(self):
        return [c.name for c in self.columns]

    @classmethod
    def from_dict(cls, spec):
        if not isinstance(spec, dict) or "columns" not in spec:
            raise SchemaError("schema needs a 'columns' list")
        default_missing = str(spec.get("missing", ""))
        cols = []
        for i, c in enumerate(spec["columns"]):
            if not isinstance(c, dict) or "name" not in c or "kind" not in c:
                raise SchemaError(f"schema column {i + 1}: needs 'name' and 'kind'")
            levels = tuple(str(v) for v in c.get("levels", ()) or ())
            cols.append(ColumnSpec(
                name=str(c["name"]),
                kind=str(c["kind"]),
                levels=levels,
                missing=str(c.get("missing", default_missing)),
            ))
        return cls(columns=tuple(cols), delimiter=str(spec.get("delimiter", ",")))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                spec = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise SchemaError(f"cannot parse schema file {path}: {exc}") from exc
        return cls.from_dict(spec)

    def to_dict(self):
        out = {"delimiter": self.delimiter, "columns": []}
        for c in self.columns:
            d = {"name": c.name, "kind": c.kind, "missing": c.missing}
            if c.levels:
                d["levels"] = list(c.levels)
            out["columns"].append(d)
        return out


@dataclass(frozen=True)
class DesignSpec:
    """Layout of the dummy-coded main-effects design vector.

    Column 0 is the intercept; level ``l > 1`` of variable ``j`` occupies
    column ``offsets[j] + l - 2``. Level 1 is the reference.
    """

    levels: tuple
    offsets: tuple

    @classmethod
    def from_levels(cls, levels):
        levels = tuple(int(d) for d in levels)
        offsets, pos = [], 1
        for d in levels:
            if d < 1:
                raise ValueError("every categorical variable needs at least one level")
            offsets.append(pos)
            pos += d - 1
        return cls(levels=levels, offsets=tuple(offsets))

    @property
    def p_star(self):
        return 1 + sum(d - 1 for d in self.levels)

    def column(self, j, level):
        """0-based design column of (variable j, 1-based level > 1)."""
        if not 2 <= level <= self.levels[j]:
            raise ValueError(f"level {level} has no design column for variable {j}")
        return self.offsets[j] + level - 2


def encode_design(x, spec):
    """Design vector ``D(x)`` for a full vector of 1-based codes."""
    x = np.asarray(x)
    if x.shape != (len(spec.levels),):
        raise ValueError(f"expected {len(spec.levels)} codes, got shape {x.shape}")
    out = np.zeros(spec.p_star)
    out[0] = 1.0
    for j, (code, d) in enumerate(zip(x, spec.levels)):
        if not 1 <= code <= d:
            raise ValueError(f"code {code} out of range 1..{d} for variable {j}")
        if code > 1:
            out[spec.offsets[j] + code - 2] = 1.0
    return out


def design_matrix(codes0, spec):
    """Stacked design rows for 0-based codes of shape (n, p)."""
    codes0 = np.asarray(codes0)
    n = codes0.shape[0]
    D = np.zeros((n, spec.p_star))
    D[:, 0] = 1.0
    rows = np.arange(n)
    for j, off in enumerate(spec.offsets):
        c = codes0[:, j]
        hit = c > 0
        D[rows[hit], off + c[hit] - 1] = 1.0
    return D


@dataclass(frozen=True)
class SemicontinuousLink:
    """Where the two halves of a semicontinuous source column live."""

    name: str
    x_col: int
    y_col: int


@dataclass
class MixedDataset:
    """n records of p categorical codes and q continuous values.

    ``X`` holds 1-based codes (0 where missing), ``Y`` floats (nan where
    missing). ``raw`` keeps the original text cells in schema order so that
    observed values can be written back verbatim.
    """

    X: np.ndarray
    Y: np.ndarray
    Rx: np.ndarray
    Ry: np.ndarray
    x_names: list
    levels: list
    y_names: list
    schema: Schema = None
    semicontinuous: list = field(default_factory=list)
    raw: list = None

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        X = np.asarray(self.X, dtype=np.int64)
        n = X.shape[0] if X.size or not self.y_names else Y.shape[0]
        self.X = X.reshape(n, len(self.x_names))
        self.Y = Y.reshape(n, len(self.y_names))
        self.Rx = np.asarray(self.Rx, dtype=bool).reshape(self.X.shape)
        self.Ry = np.asarray(self.Ry, dtype=bool).reshape(self.Y.shape)
        self.X = np.where(self.Rx, 0, self.X)
        self.Y = np.where(self.Ry, np.nan, self.Y)
        d = self.d
        obs = ~self.Rx
        if np.any((self.X < 1) & obs) or np.any((self.X > d[None, :]) & obs):
            raise DataError("observed categorical code out of range")
        if not np.all(np.isfinite(self.Y[~self.Ry])):
            raise DataError("observed continuous value is not finite")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def q(self):
        return self.Y.shape[1]

    @property
    def d(self):
        return np.array([len(lv) for lv in self.levels], dtype=np.int64)

    @property
    def design(self):
        return DesignSpec.from_levels(self.d)

    @property
    def codebook(self):
        return {name: {lab: k + 1 for k, lab in enumerate(lv)}
                for name, lv in zip(self.x_names, self.levels)}

    def subset(self, rows):
        rows = np.asarray(rows)
        raw = None if self.raw is None else [self.raw[i] for i in rows]
        return replace(self, X=self.X[rows], Y=self.Y[rows], Rx=self.Rx[rows],
                       Ry=self.Ry[rows], raw=raw)


def decompose_semicontinuous(values, mask):
    """Split a semicontinuous column into indicator and continuous parts.

    Returns ``(indicator, indicator_mask, continuous, continuous_mask)``. The
    indicator is 1 for a zero value and 2 for a nonzero value; the
    continuous part is masked wherever the indicator is 1 or the source is
    missing.
    """
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    nonzero = (values != 0) & ~mask
    indicator = np.where(mask, 0, np.where(nonzero, 2, 1)).astype(np.int64)
    cont_mask = mask | ~nonzero
    cont = np.where(cont_mask, np.nan, values)
    return indicator, mask.copy(), cont, cont_mask


def recompose_semicontinuous(indicator, continuous):
    """Inverse of :func:`decompose_semicontinuous` on completed values."""
    indicator = np.asarray(indicator)
    continuous = np.asarray(continuous, dtype=float)
    return np.where(indicator == 2, continuous, 0.0)


def _parse_float(cell, row, col):
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"non-numeric value {cell!r}", row, col) from None
    if not math.isfinite(v):
        raise DataError(f"non-finite value {cell!r}", row, col)
    return v


def read_rows(source, schema):
    """Read a delimited file (path or text handle) and check its header."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_rows(fh, schema)
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        reader = csv.reader(source, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty data file", row=0) from None
        header = [h.strip() for h in header]
        if header != schema.names:
            raise DataError(f"header {header} does not match schema columns {schema.names}",
                            row=0)
        return [row for row in reader if row]
    raise TypeError(f"unsupported data source {type(source).__name__}")


def load_dataset(source, schema):
    """Parse rows against ``schema`` into a :class:`MixedDataset`.

    ``source`` is a path, an open text handle (with header row), or an
    already-split list of rows without header.
    """
    if isinstance(source, (list, tuple)):
        rows = [list(r) for r in source]
    else:
        rows = read_rows(source, schema)
    ncol = len(schema.columns)
    n = len(rows)

    x_names, levels, y_names, links = [], [], [], []
    x_cols, y_cols = [], []
    for k, col in enumerate(schema.columns):
        if col.kind == CATEGORICAL:
            x_names.append(col.name)
            levels.append(list(col.levels))
            x_cols.append(k)
        elif col.kind == CONTINUOUS:
            y_names.append(col.name)
            y_cols.append(k)
    for k, col in enumerate(schema.columns):
        if col.kind == SEMICONTINUOUS:
            links.append(SemicontinuousLink(col.name, len(x_names), len(y_names)))
            x_names.append(col.name + INDICATOR_SUFFIX)
            levels.append(list(INDICATOR_LEVELS))
            y_names.append(col.name)

    X = np.zeros((n, len(x_names)), dtype=np.int64)
    Rx = np.zeros((n, len(x_names)), dtype=bool)
    Y = np.full((n, len(y_names)), np.nan)
    Ry = np.zeros((n, len(y_names)), dtype=bool)

    for i, row in enumerate(rows):
        if len(row) != ncol:
            raise DataError(f"expected {ncol} values, found {len(row)}", row=i + 1)
    for jx, k in enumerate(x_cols):
        col = schema.columns[k]
        lookup = {lab: c + 1 for c, lab in enumerate(col.levels)}
        for i, row in enumerate(rows):
            cell = row[k].strip()
            if cell == col.missing:
                Rx[i, jx] = True
                continue
            code = lookup.get(cell)
            if code is None:
                raise DataError(f"unknown level {cell!r}", i + 1, col.name)
            X[i, jx] = code
    for jy, k in enumerate(y_cols):
        col = schema.columns[k]
        for i, row in enumerate(rows):
            cell = row[k].strip()
            if cell == col.missing:
                Ry[i, jy] = True
            else:
                Y[i, jy] = _parse_float(cell, i + 1, col.name)
    for link in links:
        k = schema.names.index(link.name)
        col = schema.columns[k]
        vals = np.zeros(n)
        miss = np.zeros(n, dtype=bool)
        for i, row in enumerate(rows):
            cell = row[k].strip()
            if cell == col.missing:
                miss[i] = True
            else:
                vals[i] = _parse_float(cell, i + 1, col.name)
        ind, ind_mask, cont, cont_mask = decompose_semicontinuous(vals, miss)
        X[:, link.x_col], Rx[:, link.x_col] = ind, ind_mask
        Y[:, link.y_col], Ry[:, link.y_col] = cont, cont_mask

    raw = [[c.strip() for c in row] for row in rows]
    return MixedDataset(X=X, Y=Y, Rx=Rx, Ry=Ry, x_names=x_names, levels=levels,
                        y_names=y_names, schema=schema, semicontinuous=links, raw=raw)


@dataclass(frozen=True)
class StandardizationRecord:
    mean: np.ndarray
    sd: np.ndarray

    def transform(self, Y):
        return (np.asarray(Y, dtype=float) - self.mean) / self.sd

    def inverse(self, Z):
        return np.asarray(Z, dtype=float) * self.sd + self.mean


def standardize(dataset):
    """Centre and scale each continuous column using its observed entries.

    Returns the transformed dataset and the record needed to back-transform
    imputations.
    """
    q = dataset.q
    mean, sd = np.zeros(q), np.ones(q)
    for v in range(q):
        obs = dataset.Y[~dataset.Ry[:, v], v]
        name = dataset.y_names[v]
        if obs.size < 2:
            raise DataError("fewer than two observed values; cannot standardize",
                            column=name)
        s = obs.std(ddof=1)
        if not s > 0:
            raise DataError("zero variance among observed values", column=name)
        mean[v], sd[v] = obs.mean(), s
    rec = StandardizationRecord(mean=mean, sd=sd)
    return replace(dataset, Y=rec.transform(dataset.Y)), rec


def completed_rows(dataset, X, Y):
    """Render completed codes / original-scale values as text rows.

    Observed cells are copied verbatim from ``dataset.raw``; imputed cells
    are written as level labels or ``repr`` of the float.
    """
    schema = dataset.schema
    x_index = {name: j for j, name in enumerate(dataset.x_names)}
    y_index = {name: v for v, name in enumerate(dataset.y_names)}
    links = {lk.name: lk for lk in dataset.semicontinuous}
    out = []
    for i in range(dataset.n):
        row = []
        raw = dataset.raw[i] if dataset.raw is not None else None
        for k, col in enumerate(schema.columns):
            observed = raw is not None and raw[k] != col.missing
            if observed:
                row.append(raw[k])
            elif col.kind == CATEGORICAL:
                row.append(col.levels[X[i, x_index[col.name]] - 1])
            elif col.kind == CONTINUOUS:
                row.append(repr(float(Y[i, y_index[col.name]])))
            else:
                lk = links[col.name]
                row.append(repr(float(recompose_semicontinuous(X[i, lk.x_col], Y[i, lk.y_col]))))
        out.append(row)
    return out


def write_rows(path, schema, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=schema.delimiter, lineterminator="\n")
        w.writerow(schema.names)
        w.writerows(rows)


def dataset_from_arrays(X, Y, x_names, levels, y_names, Rx=None, Ry=None):
    """Build a dataset (with a synthetic schema and raw text) from arrays.

    Used by the simulation harness, where populations are generated rather
    than read from disk.
    """
    X = np.asarray(X, dtype=np.int64)
    Y = np.asarray(Y, dtype=float)
    Rx = np.zeros(X.shape, dtype=bool) if Rx is None else np.asarray(Rx, dtype=bool)
    Ry = np.zeros(Y.shape, dtype=bool) if Ry is None else np.asarray(Ry, dtype=bool)
    cols = [ColumnSpec(nm, CATEGORICAL, tuple(lv)) for nm, lv in zip(x_names, levels)]
    cols += [ColumnSpec(nm, CONTINUOUS) for nm in y_names]
    schema = Schema(columns=tuple(cols))
    return MixedDataset(X=X, Y=Y, Rx=Rx, Ry=Ry, x_names=list(x_names),
                        levels=[list(lv) for lv in levels], y_names=list(y_names),
                        schema=schema, raw=None)
