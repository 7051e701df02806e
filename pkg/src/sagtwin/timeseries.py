"""Core time-series types: uniformly sampled multivariate series, lag
stacks, least-squares slopes and min-max scaling.

All model code in this package works on integer sample indices; wall time
only enters through ``(start_time, dt)`` bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError


class VarKind(str, Enum):
    MV = "MV"
    SP = "SP"
    CV = "CV"


@dataclass(frozen=True)
class VariableId:
    """Identifies one process variable.

    MV/SP indices: 1 = tonnage (t/h), 2 = solids (%), 3 = speed (rpm).
    CV indices: 1 = bearing pressure (kPa), 2 = motor power (kW).
    """

    kind: VarKind
    index: int

    def __post_init__(self):
        hi = 2 if self.kind is VarKind.CV else 3
        if not 1 <= self.index <= hi:
            raise ConfigError(f"index {self.index} out of range for {self.kind.value}")

    def __str__(self):
        prefix = {VarKind.MV: "u", VarKind.SP: "usp", VarKind.CV: "y"}[self.kind]
        return f"{prefix}{self.index}"


MV_IDS = tuple(VariableId(VarKind.MV, i) for i in (1, 2, 3))
SP_IDS = tuple(VariableId(VarKind.SP, i) for i in (1, 2, 3))
CV_IDS = tuple(VariableId(VarKind.CV, i) for i in (1, 2))

#: Column order used by every dataset emitted or consumed in this package.
DATASET_IDS = MV_IDS + SP_IDS + CV_IDS


@dataclass
class Series:
    """Uniformly sampled multivariate series, one variable per column."""

    start_time: float
    dt: float
    values: np.ndarray  # [T, V]
    ids: tuple[VariableId, ...]
    quality: np.ndarray | None = None  # optional per-row flags

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {self.values.shape}")
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if len(self.ids) != self.values.shape[1]:
            raise ValueError(
                f"{len(self.ids)} ids for {self.values.shape[1]} columns"
            )
        if self.values.size and not np.all(np.isfinite(self.values)):
            raise ValueError("series contains non-finite values")

    def __len__(self):
        return self.values.shape[0]

    def col_index(self, var: VariableId) -> int:
        try:
            return self.ids.index(var)
        except ValueError:
            raise KeyError(f"variable {var} not in series") from None

    def column(self, var: VariableId) -> np.ndarray:
        return self.values[:, self.col_index(var)]

    def select(self, ids: tuple[VariableId, ...]) -> np.ndarray:
        cols = [self.col_index(v) for v in ids]
        return self.values[:, cols]

    def time_at(self, k: int) -> float:
        return self.start_time + k * self.dt


@dataclass
class LagStack:
    """Lagged values ordered newest-first: entries[0] is the most recent."""

    entries: np.ndarray  # [depth, V] or [depth]

    @property
    def depth(self) -> int:
        return self.entries.shape[0]


def stack_lags(series: Series, k: int, j: int, ids: tuple[VariableId, ...] | None = None) -> LagStack:
    """Collect the j samples before time index k, newest-first.

    Returns values at indices k-1, k-2, ..., k-j.  ``k`` itself is the
    "current" instant and need not exist in the series.
    """
    if j < 0:
        raise IndexError(f"lag depth must be >= 0, got {j}")
    if k - j < 0 or k > len(series):
        raise IndexError(f"lag window [{k - j}, {k}) out of range for {len(series)} samples")
    vals = series.values if ids is None else series.select(ids)
    block = vals[k - j : k]
    return LagStack(entries=block[::-1].copy())


def slope(series: Series, k: int, w: int) -> np.ndarray:
    """Least-squares slope (units per second) over the w samples before k.

    Fits a line through samples k-w .. k-1 against their sample times and
    returns the per-variable slope.  Exactly invariant to adding a constant
    and scales linearly with the data.
    """
    if w < 2:
        raise IndexError(f"slope window must have w >= 2, got {w}")
    if k - w < 0 or k > len(series):
        raise IndexError(f"slope window [{k - w}, {k}) out of range for {len(series)} samples")
    block = series.values[k - w : k]
    t = np.arange(w, dtype=float) * series.dt
    t = t - t.mean()
    denom = float(t @ t)
    return (t @ (block - block.mean(axis=0))) / denom


@dataclass
class Scaler:
    """Per-variable min-max scaler mapping training ranges onto [0, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if np.any(self.hi <= self.lo):
            raise ConfigError("scaler requires max > min for every variable")

    @classmethod
    def fit(cls, values: np.ndarray) -> "Scaler":
        values = np.asarray(values, dtype=float)
        return cls(lo=values.min(axis=0), hi=values.max(axis=0))

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.lo) / (self.hi - self.lo)

    def inverse(self, scaled: np.ndarray) -> np.ndarray:
        return scaled * (self.hi - self.lo) + self.lo

    def transform_var(self, values: np.ndarray, col: int) -> np.ndarray:
        return (values - self.lo[col]) / (self.hi[col] - self.lo[col])

    def inverse_var(self, scaled: np.ndarray, col: int) -> np.ndarray:
        return scaled * (self.hi[col] - self.lo[col]) + self.lo[col]
