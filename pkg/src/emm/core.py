"""Time-series containers, index conventions and skill metrics.

User-facing row indices are 1-based and inclusive (``[1, 2000]`` is the first
2000 samples).  Missing values are ``NaN`` everywhere; a state-space row with
any ``NaN`` coordinate is invalid and never used as a neighbor or a
prediction origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np


class EmmError(Exception):
    """Base class for all library errors."""


class DataError(EmmError, ValueError):
    """Malformed or inconsistent input data."""


class UndefinedMetricError(EmmError, ArithmeticError):
    """A skill metric cannot be computed (too few pairs, zero variance)."""


class NumericalError(EmmError, ArithmeticError):
    """A numerical procedure failed (divergence, degenerate geometry)."""


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniformly sampled, named, real-valued sequence.

    ``time(i) = t0 + i * dt`` for 0-based ``i``.
    """

    name: str
    values: np.ndarray
    dt: float = 1.0
    t0: float = 0.0

    def __post_init__(self):
        values = _frozen_array(self.values)
        if values.ndim != 1 or values.size < 1:
            raise DataError(f"series {self.name!r} must be a non-empty 1-D sequence")
        if not self.dt > 0:
            raise DataError(f"series {self.name!r}: dt must be > 0, got {self.dt}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))

    def __len__(self):
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.size)

    def renamed(self, name: str) -> "TimeSeries":
        return TimeSeries(name, self.values, self.dt, self.t0)

    def with_values(self, values, name: str | None = None) -> "TimeSeries":
        return TimeSeries(self.name if name is None else name, values, self.dt, self.t0)

    def head(self, n: int) -> "TimeSeries":
        """First ``n`` samples."""
        return TimeSeries(self.name, self.values[:n], self.dt, self.t0)


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Row-per-time, column-per-coordinate matrix with unique column labels."""

    labels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        labels = tuple(str(s) for s in self.labels)
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1:
            raise DataError("state-space values must be a non-empty 2-D array")
        if len(labels) != values.shape[1] or len(labels) < 1:
            raise DataError(
                f"state-space needs one label per column ({len(labels)} labels, "
                f"{values.shape[1]} columns)"
            )
        if len(set(labels)) != len(labels):
            raise DataError(f"duplicate state-space labels: {labels}")
        values.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_series(cls, series: Sequence[TimeSeries]) -> "StateSpace":
        series = list(series)
        if not series:
            raise DataError("cannot build a state-space from zero series")
        n = len(series[0])
        if any(len(s) != n for s in series):
            raise DataError("all state-space columns must share one length")
        return cls(tuple(s.name for s in series), np.column_stack([s.values for s in series]))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def E(self) -> int:
        return self.values.shape[1]

    @property
    def valid_mask(self) -> np.ndarray:
        return ~np.isnan(self.values).any(axis=1)

    def column(self, label: str) -> np.ndarray:
        return self.values[:, self.labels.index(label)]

    def select(self, columns: Sequence[int]) -> "StateSpace":
        """Sub-space from 0-based column positions, in the given order."""
        columns = list(columns)
        if not columns:
            raise DataError("empty column selection")
        return StateSpace(tuple(self.labels[c] for c in columns), self.values[:, columns])

    def concat(self, *others: "StateSpace") -> "StateSpace":
        spaces = (self,) + others
        if any(s.n_rows != self.n_rows for s in spaces):
            raise DataError("cannot concatenate state-spaces of different lengths")
        labels = tuple(label for s in spaces for label in s.labels)
        return StateSpace(labels, np.hstack([s.values for s in spaces]))


@dataclass(frozen=True)
class SplitSpec:
    """Library and prediction row ranges, 1-based inclusive."""

    lib_start: int
    lib_end: int
    pred_start: int
    pred_end: int

    def __post_init__(self):
        if not (1 <= self.lib_start <= self.lib_end):
            raise DataError(f"invalid library range [{self.lib_start}, {self.lib_end}]")
        if not (1 <= self.pred_start <= self.pred_end):
            raise DataError(f"invalid prediction range [{self.pred_start}, {self.pred_end}]")

    @classmethod
    def parse(cls, lib: str, pred: str) -> "SplitSpec":
        """Build from ``"a,b"`` strings as used on the command line."""
        try:
            a, b = (int(v) for v in lib.split(","))
            c, d = (int(v) for v in pred.split(","))
        except ValueError:
            raise DataError(f"ranges must look like 'start,end': lib={lib!r} pred={pred!r}")
        return cls(a, b, c, d)

    def check(self, n_rows: int) -> None:
        if self.lib_end > n_rows or self.pred_end > n_rows:
            raise DataError(
                f"split [{self.lib_start}-{self.lib_end}]/[{self.pred_start}-{self.pred_end}] "
                f"exceeds {n_rows} rows"
            )

    @property
    def overlapping(self) -> bool:
        return self.lib_start <= self.pred_end and self.pred_start <= self.lib_end

    def lib_rows(self) -> np.ndarray:
        """0-based library row indices."""
        return np.arange(self.lib_start - 1, self.lib_end)

    def pred_rows(self) -> np.ndarray:
        """0-based prediction row indices."""
        return np.arange(self.pred_start - 1, self.pred_end)


def _valid_pairs(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"metric inputs must be equal-length 1-D sequences, got {a.shape} and {b.shape}")
    keep = ~(np.isnan(a) | np.isnan(b))
    return a[keep], b[keep]


def pearson_rho(a, b) -> float:
    """Sample Pearson correlation over pairs where both values are present."""
    a, b = _valid_pairs(a, b)
    if a.size < 2:
        raise UndefinedMetricError(f"pearson_rho needs >= 2 valid pairs, got {a.size}")
    da = a - a.mean()
    db = b - b.mean()
    saa = np.dot(da, da)
    sbb = np.dot(db, db)
    if saa == 0 or sbb == 0:
        raise UndefinedMetricError("pearson_rho undefined for a constant series")
    rho = np.dot(da, db) / np.sqrt(saa * sbb)
    return float(min(1.0, max(-1.0, rho)))


def rmse(a, b) -> float:
    a, b = _valid_pairs(a, b)
    if a.size < 1:
        raise UndefinedMetricError("rmse needs at least one valid pair")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def mae(a, b) -> float:
    a, b = _valid_pairs(a, b)
    if a.size < 1:
        raise UndefinedMetricError("mae needs at least one valid pair")
    return float(np.mean(np.abs(a - b)))


def standard_error(samples) -> float:
    """Sample standard deviation (ddof=1) divided by sqrt(n)."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise UndefinedMetricError(f"standard_error needs >= 2 samples, got {x.size}")
    return float(np.std(x, ddof=1) / np.sqrt(x.size))


def _or_nan(fn, *args) -> float:
    try:
        return fn(*args)
    except UndefinedMetricError:
        return float("nan")


@dataclass(frozen=True, eq=False)
class ForecastResult:
    """Predictions and observations aligned on the forecast time index.

    Metrics that cannot be computed are ``NaN``; see :attr:`rho_defined`.
    """

    predictions: TimeSeries
    observations: TimeSeries
    rho: float
    rmse: float
    mae: float
    n_valid: int
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, pred, obs, name: str, dt: float = 1.0, t0: float = 0.0,
                    diagnostics: dict | None = None) -> "ForecastResult":
        pred = np.asarray(pred, dtype=float)
        obs = np.asarray(obs, dtype=float)
        n_valid = int(np.count_nonzero(~(np.isnan(pred) | np.isnan(obs))))
        return cls(
            predictions=TimeSeries(f"{name}_pred", pred, dt, t0),
            observations=TimeSeries(f"{name}_obs", obs, dt, t0),
            rho=_or_nan(pearson_rho, pred, obs),
            rmse=_or_nan(rmse, pred, obs),
            mae=_or_nan(mae, pred, obs),
            n_valid=n_valid,
            diagnostics=dict(diagnostics or {}),
        )

    @property
    def rho_defined(self) -> bool:
        return not np.isnan(self.rho)

    def same_as(self, other: "ForecastResult") -> bool:
        """Bit-identical predictions and observations."""
        return (
            np.array_equal(self.predictions.values, other.predictions.values, equal_nan=True)
            and np.array_equal(self.observations.values, other.observations.values, equal_nan=True)
        )
