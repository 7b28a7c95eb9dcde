"""Dataset container, CSV ingestion, column standardization and run config."""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .errors import (ConfigError, DataError, DegenerateColumnError,
                     DomainError, ParseError, SchemaError)

ESTIMANDS = ("ATE", "QTE", "ATT", "QTT")
WEIGHT_SCHEMES = ("multinomial", "exponential")


def _frozen(arr, dtype=float):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates ``X`` (n x p), binary treatment ``A`` and outcome ``Y``.

    Row order is unit identity: match indices everywhere refer to rows.
    Arrays are copied and made read-only on construction.
    """

    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    covariate_names: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        A = np.asarray(self.A)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim != 2 or A.ndim != 1 or Y.ndim != 1:
            raise DataError("X must be 2-D, A and Y 1-D")
        if not (X.shape[0] == A.shape[0] == Y.shape[0]):
            raise DataError(
                f"leading dimensions differ: X {X.shape[0]}, A {A.shape[0]}, "
                f"Y {Y.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise DataError("missing or non-finite values in X or Y")
        bad = ~np.isin(A, (0, 1))
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise DomainError(f"treatment must be 0/1; row {row} has {A[row]!r}")
        A = A.astype(np.int8)
        if A.sum() == 0 or A.sum() == A.shape[0]:
            raise DomainError("both treatment arms must be non-empty")
        names = tuple(self.covariate_names) or tuple(
            f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError("covariate_names length does not match X")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "A", _frozen(A, np.int8))
        object.__setattr__(self, "Y", _frozen(Y))
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def n_treated(self):
        return int(self.A.sum())

    def with_outcome(self, Y):
        return Dataset(self.X, self.A, Y, self.covariate_names)


@dataclass(frozen=True, eq=False)
class StandardizationParams:
    means: np.ndarray
    sds: np.ndarray

    def apply(self, V):
        return (np.asarray(V, dtype=float) - self.means) / self.sds

    def invert(self, Z):
        return np.asarray(Z, dtype=float) * self.sds + self.means


def standardize_columns(V):
    """Center each column to mean 0 and scale to unit sample variance.

    Uses the n - 1 denominator. Returns ``(standardized, params)``.
    Raises :class:`DegenerateColumnError` for a column with zero variance.
    """
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] < 2:
        raise DegenerateColumnError("need at least two rows to standardize", 0)
    means = V.mean(axis=0)
    centered = V - means
    sds = np.sqrt((centered ** 2).sum(axis=0) / (V.shape[0] - 1))
    for j, sd in enumerate(sds):
        scale = max(1.0, abs(means[j]))
        if not sd > 1e-13 * scale:
            raise DegenerateColumnError(
                f"column {j} has zero sample variance", j)
    return centered / sds, StandardizationParams(_frozen(means), _frozen(sds))


def load_dataset(csv_source, schema):
    """Read a comma-separated file into a :class:`Dataset`.

    ``csv_source`` may be a path, a text/binary stream or raw bytes.
    Only the columns named in ``schema`` are used.
    """
    if isinstance(csv_source, (bytes, bytearray)):
        csv_source = io.BytesIO(csv_source)
    try:
        frame = pd.read_csv(csv_source, dtype=str, keep_default_na=False,
                            encoding="utf-8", skipinitialspace=True)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise DataError(f"could not read CSV: {exc}") from exc
    frame.columns = [c.strip() for c in frame.columns]

    wanted = [schema.treatment_column, schema.outcome_column,
              *schema.covariate_columns]
    for name in wanted:
        if name not in frame.columns:
            raise SchemaError(f"column {name!r} not found in data")

    parsed = {}
    for name in wanted:
        raw = frame[name].str.strip()
        values = pd.to_numeric(raw, errors="coerce")
        bad = values.isna().to_numpy()
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            cell = raw.iloc[row]
            what = "missing value" if cell == "" else f"non-numeric value {cell!r}"
            # +2: one for the header, one for 1-based line numbers
            raise ParseError(f"{what} in column {name!r}, data row {row + 1} "
                             f"(line {row + 2})", row=row, column=name)
        parsed[name] = values.to_numpy(dtype=float)

    A = parsed[schema.treatment_column]
    bad = ~np.isin(A, (0.0, 1.0))
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DomainError(
            f"treatment column {schema.treatment_column!r} must be 0/1; "
            f"data row {row + 1} has {A[row]:g}")
    X = np.column_stack([parsed[c] for c in schema.covariate_columns])
    return Dataset(X, A.astype(np.int8), parsed[schema.outcome_column],
                   tuple(schema.covariate_columns))


@dataclass(frozen=True)
class ModelEntry:
    kind: str
    feature_map: str
    arm: Optional[int] = None


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 1000
    weight_scheme: str = "exponential"
    seed: int = 0
    refit_sieve: bool = True

    def __post_init__(self):
        if int(self.replicates) < 2:
            raise ConfigError("bootstrap.replicates must be >= 2")
        if self.weight_scheme not in WEIGHT_SCHEMES:
            raise ConfigError(
                f"bootstrap.weight_scheme must be one of {WEIGHT_SCHEMES}")


@dataclass(frozen=True)
class SchemaConfig:
    treatment_column: str
    outcome_column: str
    covariate_columns: tuple
    estimand: tuple = ("ATE",)
    xi: tuple = ()
    M: int = 1
    sieve_degree: int = 2
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    models: tuple = ()

    def __post_init__(self):
        if not self.covariate_columns:
            raise ConfigError("covariate_columns must not be empty")
        estimand = self.estimand
        if isinstance(estimand, str):
            estimand = (estimand,)
        estimand = tuple(e.upper() for e in estimand)
        for e in estimand:
            if e not in ESTIMANDS:
                raise ConfigError(f"unknown estimand {e!r}; use one of {ESTIMANDS}")
        object.__setattr__(self, "estimand", estimand)
        object.__setattr__(self, "covariate_columns", tuple(self.covariate_columns))
        xi = tuple(float(x) for x in self.xi)
        if any(not 0.0 < x < 1.0 for x in xi):
            raise ConfigError("xi values must lie strictly inside (0, 1)")
        if {"QTE", "QTT"} & set(estimand) and not xi:
            raise ConfigError("quantile estimands need a non-empty xi list")
        object.__setattr__(self, "xi", xi)
        if int(self.M) < 1:
            raise ConfigError("M must be >= 1")
        if int(self.sieve_degree) < 0:
            raise ConfigError("sieve_degree must be >= 0")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {"treatment_column", "outcome_column", "covariate_columns",
                 "estimand", "xi", "M", "sieve_degree", "bootstrap", "models"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for req in ("treatment_column", "outcome_column", "covariate_columns"):
            if req not in d:
                raise ConfigError(f"config is missing {req!r}")
        try:
            boot = BootstrapConfig(**d.pop("bootstrap", {}))
            models = tuple(ModelEntry(**m) for m in d.pop("models", ()))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(bootstrap=boot, models=models, **d)

    def to_dict(self):
        return {
            "treatment_column": self.treatment_column,
            "outcome_column": self.outcome_column,
            "covariate_columns": list(self.covariate_columns),
            "estimand": list(self.estimand),
            "xi": list(self.xi),
            "M": int(self.M),
            "sieve_degree": int(self.sieve_degree),
            "bootstrap": {
                "replicates": int(self.bootstrap.replicates),
                "weight_scheme": self.bootstrap.weight_scheme,
                "seed": int(self.bootstrap.seed),
                "refit_sieve": bool(self.bootstrap.refit_sieve),
            },
            "models": [{k: v for k, v in vars(m).items() if v is not None}
                       for m in self.models],
        }


def read_config_file(path):
    """Parse a TOML or JSON file into a plain dict."""
    ext = os.path.splitext(str(path))[1].lower()
    try:
        if ext == ".json":
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        import tomli
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def load_config(path):
    return SchemaConfig.from_dict(read_config_file(path))


def numeric_columns(X: np.ndarray) -> Sequence[int]:
    """Indices of columns that are not pure 0/1 indicators."""
    return [j for j in range(X.shape[1]) if not np.isin(X[:, j], (0.0, 1.0)).all()]
