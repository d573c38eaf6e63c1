"""Cohort ingestion, covariate encoding and moment targets.

A :class:`Dataset` holds the outcome, the continuous exposure and a table of
typed covariates.  :func:`encode` turns the covariates into a numeric
:class:`DesignMatrix` (dummy coding for categorical columns) and
:func:`moment_targets` computes the plug-in moments the balancing weights are
asked to preserve.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

KINDS = ("continuous", "binary", "ordinal", "categorical")
MAX_MOMENT = 4
_MISSING_TOKENS = {"", "na", "nan", "null", "none", "."}


class SchemaError(ValueError):
    """The column-role assignment does not match the data."""


class DataParseError(ValueError):
    """A cell could not be read as the type its column requires."""

    def __init__(self, message: str, column: str | None = None, row: int | None = None):
        super().__init__(message)
        self.column = column
        self.row = row


class DegenerateColumnError(ValueError):
    pass


def _frozen(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Schema:
    """Roles of the columns in a cohort table."""

    outcome: str
    exposure: str
    covariates: dict[str, str]

    def __post_init__(self):
        if not self.covariates:
            raise SchemaError("schema needs at least one covariate")
        for name, kind in self.covariates.items():
            if kind not in KINDS:
                raise SchemaError(f"covariate {name!r}: unknown kind {kind!r} (expected one of {KINDS})")
        roles = [self.outcome, self.exposure, *self.covariates]
        if len(set(roles)) != len(roles):
            raise SchemaError("a column may only be assigned one role")

    @classmethod
    def from_flags(cls, outcome: str, exposure: str, covariates: Sequence[str]) -> "Schema":
        """Build from ``name:kind`` strings, e.g. ``["x1:continuous", "race:categorical"]``."""
        cov = {}
        for spec in covariates:
            name, sep, kind = spec.rpartition(":")
            if not sep or not name:
                raise SchemaError(f"covariate flag {spec!r} must look like name:kind")
            cov[name] = kind
        return cls(outcome, exposure, cov)

    @classmethod
    def from_json(cls, path: str | Path) -> "Schema":
        raw = json.loads(Path(path).read_text())
        try:
            return cls(raw["outcome"], raw["exposure"], dict(raw["covariates"]))
        except KeyError as exc:
            raise SchemaError(f"schema file lacks key {exc}") from None

    def to_dict(self) -> dict:
        return {"outcome": self.outcome, "exposure": self.exposure, "covariates": dict(self.covariates)}


@dataclass(frozen=True)
class Dataset:
    outcome: np.ndarray
    exposure: np.ndarray
    covariates: pd.DataFrame
    kinds: dict[str, str]

    def __post_init__(self):
        object.__setattr__(self, "outcome", _frozen(self.outcome))
        object.__setattr__(self, "exposure", _frozen(self.exposure))
        n = self.outcome.shape[0]
        if self.outcome.ndim != 1 or self.exposure.shape != (n,):
            raise SchemaError("outcome and exposure must be vectors of equal length")
        if n < 2:
            raise SchemaError("need at least two rows")
        if len(self.covariates) != n:
            raise SchemaError("covariate table length differs from outcome length")
        if set(self.kinds) != set(self.covariates.columns):
            raise SchemaError("every covariate needs exactly one kind tag")
        for label, vec in (("outcome", self.outcome), ("exposure", self.exposure)):
            if not np.all(np.isfinite(vec)):
                raise DataParseError(f"{label} contains non-finite values", column=label)
        for name, kind in self.kinds.items():
            if kind not in KINDS:
                raise SchemaError(f"covariate {name!r}: unknown kind {kind!r}")
            col = self.covariates[name]
            if kind == "categorical":
                if col.isna().any():
                    raise DataParseError(f"missing value in {name!r}", column=name)
                continue
            vals = np.asarray(col, dtype=float)
            if not np.all(np.isfinite(vals)):
                row = int(np.flatnonzero(~np.isfinite(vals))[0])
                raise DataParseError(f"non-finite value in {name!r} at row {row + 1}", column=name, row=row + 1)
            if kind == "binary":
                bad = np.flatnonzero((vals != 0) & (vals != 1))
                if bad.size:
                    row = int(bad[0])
                    raise DataParseError(
                        f"binary column {name!r} has value {vals[row]:g} at row {row + 1}", column=name, row=row + 1
                    )

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    def take(self, idx) -> "Dataset":
        """Row subset (used for bootstrap resamples)."""
        idx = np.asarray(idx)
        return Dataset(
            self.outcome[idx],
            self.exposure[idx],
            self.covariates.iloc[idx].reset_index(drop=True),
            dict(self.kinds),
        )

    def to_frame(self, outcome: str = "y", exposure: str = "a") -> pd.DataFrame:
        df = pd.DataFrame({outcome: self.outcome, exposure: self.exposure})
        return pd.concat([df, self.covariates.reset_index(drop=True)], axis=1)

    def schema(self, outcome: str = "y", exposure: str = "a") -> Schema:
        return Schema(outcome, exposure, dict(self.kinds))


def _parse_numeric(raw: pd.Series, name: str) -> np.ndarray:
    out = np.empty(len(raw))
    for i, cell in enumerate(raw):
        text = cell.strip()
        if text.lower() in _MISSING_TOKENS:
            raise DataParseError(
                f"missing value in column {name!r} at row {i + 1}; impute before loading", column=name, row=i + 1
            )
        try:
            out[i] = float(text)
        except ValueError:
            raise DataParseError(
                f"non-numeric value {text!r} in column {name!r} at row {i + 1}", column=name, row=i + 1
            ) from None
        if not np.isfinite(out[i]):
            raise DataParseError(f"non-finite value in column {name!r} at row {i + 1}", column=name, row=i + 1)
    return out


def load_csv(path: str | Path, schema: Schema) -> Dataset:
    """Read a headered CSV and validate it against ``schema``.

    Rows are numbered from 1 (the first data row after the header) in error
    messages.  Any missing cell is an error.
    """
    table = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    table.columns = [c.strip() for c in table.columns]
    needed = [schema.outcome, schema.exposure, *schema.covariates]
    absent = [c for c in needed if c not in table.columns]
    if absent:
        raise SchemaError(f"columns not found in {path}: {', '.join(absent)}")

    outcome = _parse_numeric(table[schema.outcome], schema.outcome)
    exposure = _parse_numeric(table[schema.exposure], schema.exposure)
    cov = {}
    for name, kind in schema.covariates.items():
        if kind == "categorical":
            col = table[name].str.strip()
            bad = np.flatnonzero(col.str.lower().isin(_MISSING_TOKENS).to_numpy())
            if bad.size:
                row = int(bad[0]) + 1
                raise DataParseError(f"missing value in column {name!r} at row {row}", column=name, row=row)
            cov[name] = col.to_numpy(dtype=object)
        else:
            cov[name] = _parse_numeric(table[name], name)
    return Dataset(outcome, exposure, pd.DataFrame(cov), dict(schema.covariates))


def _sorted_levels(values: np.ndarray) -> list:
    levels = list(pd.unique(values))
    try:
        return sorted(levels, key=float)
    except (TypeError, ValueError):
        return sorted(levels, key=str)


@dataclass(frozen=True)
class DesignMatrix:
    """Numeric covariate matrix.

    ``kinds`` is per encoded column and is either ``"binary"`` (0/1 columns,
    dummies included) or ``"continuous"``.  ``center``/``scale`` record the
    affine map applied by :meth:`standardized`; they are 0/1 on the raw scale.
    """

    columns: np.ndarray
    names: tuple[str, ...]
    source_map: tuple[str, ...]
    kinds: tuple[str, ...]
    center: np.ndarray = field(default=None)
    scale: np.ndarray = field(default=None)

    def __post_init__(self):
        cols = np.array(self.columns, dtype=float)
        if cols.ndim != 2:
            raise ValueError("design columns must be a 2-D array")
        cols.setflags(write=False)
        object.__setattr__(self, "columns", cols)
        m = cols.shape[1]
        if not (len(self.names) == len(self.source_map) == len(self.kinds) == m):
            raise ValueError("names/source_map/kinds must have one entry per column")
        center = np.zeros(m) if self.center is None else self.center
        scale = np.ones(m) if self.scale is None else self.scale
        object.__setattr__(self, "center", _frozen(center))
        object.__setattr__(self, "scale", _frozen(scale))

    @property
    def n(self) -> int:
        return self.columns.shape[0]

    @property
    def m(self) -> int:
        return self.columns.shape[1]

    @property
    def is_binary(self) -> np.ndarray:
        return np.array([k == "binary" for k in self.kinds])

    def raw_columns(self) -> np.ndarray:
        """Columns on the original (unstandardized) scale."""
        return self.columns * self.scale + self.center

    def standardized(self) -> "DesignMatrix":
        """Continuous columns shifted to mean 0 and scaled to unit sd.

        Binary columns are left alone.  Balancing a polynomial basis of the
        standardized columns constrains the same span as the raw powers, so
        the resulting weights are unchanged; only conditioning improves.
        """
        raw = self.raw_columns()
        center = np.zeros(self.m)
        scale = np.ones(self.m)
        for j, kind in enumerate(self.kinds):
            if kind == "binary":
                continue
            sd = raw[:, j].std()
            center[j] = raw[:, j].mean()
            scale[j] = sd if sd > 0 else 1.0
        return DesignMatrix((raw - center) / scale, self.names, self.source_map, self.kinds, center, scale)

    def take(self, idx) -> "DesignMatrix":
        return DesignMatrix(self.columns[np.asarray(idx)], self.names, self.source_map, self.kinds, self.center, self.scale)

    def as_dataset_covariates(self) -> tuple[pd.DataFrame, dict[str, str]]:
        """Encoded columns as a covariate table that :func:`encode` maps back to ``self``."""
        frame = pd.DataFrame(self.raw_columns(), columns=list(self.names))
        return frame, dict(zip(self.names, self.kinds))


def encode(ds: Dataset) -> DesignMatrix:
    """Numeric encoding of the covariates of ``ds``.

    Continuous, binary and ordinal columns pass through unchanged (ordinal is
    treated as continuous).  A categorical column with k levels becomes k-1
    indicator columns; the first level in sorted order is the reference.
    """
    cols, names, sources, kinds = [], [], [], []
    for name in ds.covariates.columns:
        kind = ds.kinds[name]
        values = ds.covariates[name].to_numpy()
        if kind == "categorical":
            levels = _sorted_levels(values)
            if len(levels) < 2:
                raise DegenerateColumnError(f"categorical covariate {name!r} has a single level")
            as_str = np.array([str(v) for v in values])
            for level in levels[1:]:
                cols.append((as_str == str(level)).astype(float))
                names.append(f"{name}={level}")
                sources.append(name)
                kinds.append("binary")
        else:
            cols.append(np.asarray(values, dtype=float))
            names.append(name)
            sources.append(name)
            kinds.append("binary" if kind == "binary" else "continuous")
    return DesignMatrix(np.column_stack(cols), tuple(names), tuple(sources), tuple(kinds))


@dataclass(frozen=True)
class MomentTargets:
    """Equal-weight sample moments.

    ``covariate_targets[j][p-1]`` is the mean of ``X_j**p``; binary columns
    carry only ``p = 1``.  ``exposure_targets[q-1]`` is the mean of ``A**q``.
    """

    covariate_targets: tuple[np.ndarray, ...]
    exposure_targets: np.ndarray
    P: int
    Q: int

    def orders(self, j: int) -> int:
        return len(self.covariate_targets[j])


def _check_order(name: str, value: int) -> None:
    if not isinstance(value, (int, np.integer)) or not 1 <= value <= MAX_MOMENT:
        raise ValueError(f"{name} must be an integer in [1, {MAX_MOMENT}], got {value!r}")


def moment_targets(dm: DesignMatrix, exposure, P: int, Q: int) -> MomentTargets:
    _check_order("P", P)
    _check_order("Q", Q)
    a = np.asarray(exposure, dtype=float)
    if a.shape != (dm.n,):
        raise ValueError("exposure length differs from design rows")
    cov = []
    for j in range(dm.m):
        orders = 1 if dm.kinds[j] == "binary" else P
        x = dm.columns[:, j]
        cov.append(_frozen([np.mean(x**p) for p in range(1, orders + 1)]))
    exp = _frozen([np.mean(a**q) for q in range(1, Q + 1)])
    return MomentTargets(tuple(cov), exp, P, Q)
