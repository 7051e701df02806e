"""Historian-export ingestion: operational filtering, 6-point median
downsampling from 5 s to 30 s, and train/test segment selection.

The canonical ingest format is CSV with the header
``ts,u1,u2,u3,u1sp,u2sp,u3sp,y1,y2,sag_on,expert_online`` where ``ts`` is
integer epoch seconds and booleans are encoded as 0/1.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InsufficientDataError
from .timeseries import DATASET_IDS, Series

RAW_COLUMNS = ("ts", "u1", "u2", "u3", "u1sp", "u2sp", "u3sp", "y1", "y2", "sag_on", "expert_online")

#: Column order of the numeric payload (matches DATASET_IDS).
_VALUE_COLUMNS = RAW_COLUMNS[1:9]


@dataclass
class RawTable:
    """Columnar view of a raw 5-second historian export."""

    ts: np.ndarray          # int64 epoch seconds, strictly increasing
    values: np.ndarray      # [T, 8] floats in DATASET_IDS order
    sag_on: np.ndarray      # bool
    expert_online: np.ndarray  # bool

    def __post_init__(self):
        if len(self.ts) > 1 and not np.all(np.diff(self.ts) > 0):
            raise FormatError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.ts)


@dataclass(frozen=True)
class FilterCriteria:
    """Operational filters applied before any modelling."""

    min_feed: float = 1000.0     # t/h
    min_solids: float = 60.0     # %
    require_sag_on: bool = True
    require_expert_online: bool = True

    def __post_init__(self):
        if self.min_feed < 0 or self.min_solids < 0:
            raise FormatError("filter thresholds must be >= 0")


@dataclass
class Segment:
    """A contiguous run of raw rows that passed the criteria."""

    table: RawTable
    source_rows: tuple[int, int]  # [start, stop) in the original table


def read_raw_csv(path_or_buf) -> RawTable:
    """Parse a raw historian CSV export."""
    if hasattr(path_or_buf, "read"):
        text = path_or_buf.read()
    else:
        with open(path_or_buf, "r", encoding="utf-8") as fh:
            text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty CSV")
    header = tuple(h.strip() for h in lines[0].split(","))
    if header != RAW_COLUMNS:
        raise FormatError(f"bad header: expected {','.join(RAW_COLUMNS)}")
    if len(lines) == 1:
        data = np.empty((0, len(RAW_COLUMNS)))
    else:
        data = np.loadtxt(io.StringIO("\n".join(lines[1:])), delimiter=",", ndmin=2)
    if data.shape[1] != len(RAW_COLUMNS):
        raise FormatError(f"expected {len(RAW_COLUMNS)} columns, got {data.shape[1]}")
    return RawTable(
        ts=data[:, 0].astype(np.int64),
        values=data[:, 1:9].astype(float),
        sag_on=data[:, 9] != 0,
        expert_online=data[:, 10] != 0,
    )


def write_raw_csv(path, table: RawTable) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(RAW_COLUMNS) + "\n")
        for i in range(len(table)):
            vals = ",".join(repr(float(v)) for v in table.values[i])
            fh.write(f"{int(table.ts[i])},{vals},{int(table.sag_on[i])},{int(table.expert_online[i])}\n")


def filter_operational(table: RawTable, criteria: FilterCriteria) -> list[Segment]:
    """Split the table into maximal contiguous runs where all criteria hold.

    A run also breaks wherever the 5 s sampling grid has a gap, so that each
    returned segment is contiguous in time as well as row index.
    """
    n = len(table)
    if n == 0:
        return []
    mask = np.ones(n, dtype=bool)
    # tonnage is column 0, solids column 1 of the value payload
    mask &= table.values[:, 0] >= criteria.min_feed
    mask &= table.values[:, 1] >= criteria.min_solids
    if criteria.require_sag_on:
        mask &= table.sag_on
    if criteria.require_expert_online:
        mask &= table.expert_online

    if n > 1:
        deltas = np.diff(table.ts)
        base_dt = int(np.min(deltas[deltas > 0])) if np.any(deltas > 0) else 5
    else:
        base_dt = 5

    segments: list[Segment] = []
    start = None
    for i in range(n):
        ok = mask[i]
        contiguous = start is not None and table.ts[i] - table.ts[i - 1] == base_dt
        if ok and start is None:
            start = i
        elif start is not None and (not ok or not contiguous):
            segments.append(_make_segment(table, start, i))
            start = i if ok else None
    if start is not None:
        segments.append(_make_segment(table, start, n))
    return segments


def _make_segment(table: RawTable, start: int, stop: int) -> Segment:
    sub = RawTable(
        ts=table.ts[start:stop].copy(),
        values=table.values[start:stop].copy(),
        sag_on=table.sag_on[start:stop].copy(),
        expert_online=table.expert_online[start:stop].copy(),
    )
    return Segment(table=sub, source_rows=(start, stop))


def moving_median_downsample(segment: Segment) -> Series | None:
    """Reduce a 5 s segment to 30 s by the median of non-overlapping blocks
    of 6 samples.  A trailing remainder shorter than 6 samples is dropped.

    The 6-point median is the mean of the two middle order statistics (the
    standard even-count convention).  Returns None when the segment is
    shorter than one full block.
    """
    table = segment.table
    n_blocks = len(table) // 6
    if n_blocks == 0:
        return None
    vals = table.values[: n_blocks * 6].reshape(n_blocks, 6, -1)
    reduced = np.median(vals, axis=1)
    # output sample stamped at the last raw sample of its block
    start_time = float(table.ts[5])
    return Series(start_time=start_time, dt=30.0, values=reduced, ids=DATASET_IDS)


def select_train_test(series_list: list[Series]) -> tuple[Series, Series]:
    """Pick the longest segment as training data and the second-longest as
    test data; ties break toward the earliest start time."""
    candidates = [s for s in series_list if s is not None and len(s) > 0]
    if len(candidates) < 2:
        raise InsufficientDataError(
            f"need at least 2 non-empty segments, got {len(candidates)}"
        )
    ordered = sorted(candidates, key=lambda s: (-len(s), s.start_time))
    return ordered[0], ordered[1]


def prepare(table: RawTable, criteria: FilterCriteria) -> tuple[Series, Series, list[Series]]:
    """Full ingest pipeline: filter, downsample every segment, split."""
    segments = filter_operational(table, criteria)
    downsampled = [moving_median_downsample(s) for s in segments]
    downsampled = [s for s in downsampled if s is not None]
    train, test = select_train_test(downsampled)
    return train, test, downsampled


def write_series_csv(path, series: Series) -> None:
    """Persist a 30 s dataset using the raw schema (flags forced to 1)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(RAW_COLUMNS) + "\n")
        for i in range(len(series)):
            ts = int(series.start_time + i * series.dt)
            vals = ",".join(repr(float(v)) for v in series.values[i])
            fh.write(f"{ts},{vals},1,1\n")


def read_series_csv(path) -> Series:
    table = read_raw_csv(path)
    if len(table) < 2:
        raise FormatError("series CSV needs at least 2 rows")
    dt = float(table.ts[1] - table.ts[0])
    return Series(start_time=float(table.ts[0]), dt=dt, values=table.values, ids=DATASET_IDS)
