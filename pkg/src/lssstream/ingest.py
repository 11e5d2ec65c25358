"""Hourly wide-format load CSVs: parsing, validation and replay as a lag-embedded stream."""
from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from .model import Covariate, SeasonalVarxSpec, StreamPoint, covariate_lags

log = logging.getLogger(__name__)

POLICIES = ("fail", "drop_row", "forward_fill")


class IngestError(ValueError):
    pass


class UnknownColumnError(IngestError):
    pass


class TimestampError(IngestError):
    pass


class IrregularSpacingError(IngestError):
    def __init__(self, row: int, expected: float, got: float):
        self.row = row
        super().__init__(f"irregular spacing at row {row}: gap {got:g}s, expected {expected:g}s")


class MissingValueError(IngestError):
    pass


class TooShortError(IngestError):
    pass


@dataclass(frozen=True)
class MissingPolicy:
    mode: str = "fail"

    def __post_init__(self):
        if self.mode not in POLICIES:
            raise ValueError(f"missing policy must be one of {POLICIES}")


@dataclass
class LoadTable:
    timestamps: list
    series_names: list
    values: np.ndarray
    step_seconds: float
    events: list = field(default_factory=list)

    def __len__(self):
        return len(self.timestamps)


def parse_timestamp(text: str) -> datetime:
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(s)
    except ValueError as exc:
        raise TimestampError(f"unparseable timestamp {text!r}") from exc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    elif ts.utcoffset().total_seconds() != 0:
        raise TimestampError(f"timestamp {text!r} is not UTC")
    return ts


def _to_float(cell: str) -> float:
    cell = cell.strip()
    if cell == "":
        return math.nan
    return float(cell)


def parse_wide_csv(path, timestamp_column: str = "utc_timestamp", selected_columns=None,
                   policy: MissingPolicy | str = "fail") -> LoadTable:
    """Read a comma-separated table with an ISO-8601 UTC timestamp column.

    Spacing is inferred from the first gap and checked across the raw rows.
    """
    policy = MissingPolicy(policy) if isinstance(policy, str) else policy
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    header = [h.strip() for h in header]
    if timestamp_column not in header:
        raise UnknownColumnError(f"timestamp column {timestamp_column!r} not in header")
    if selected_columns is None:
        # other timestamp columns (local-time copies) are not series
        selected_columns = [h for h in header if h != timestamp_column and not h.endswith("_timestamp")]
    missing = [c for c in selected_columns if c not in header]
    if missing:
        raise UnknownColumnError(f"unknown column(s): {', '.join(missing)}")
    ti = header.index(timestamp_column)
    cols = [header.index(c) for c in selected_columns]
    stamps = [parse_timestamp(r[ti]) for r in rows]
    try:
        values = np.array([[_to_float(r[j]) if j < len(r) else math.nan for j in cols] for r in rows],
                          dtype=float).reshape(len(rows), len(cols))
    except ValueError as exc:
        raise IngestError(f"non-numeric value: {exc}") from exc

    step = None
    if len(stamps) >= 2:
        step = (stamps[1] - stamps[0]).total_seconds()
        if step <= 0:
            raise IrregularSpacingError(1, float("nan"), step)
        for i in range(1, len(stamps)):
            gap = (stamps[i] - stamps[i - 1]).total_seconds()
            if gap != step:
                raise IrregularSpacingError(i, step, gap)

    events = []
    bad = ~np.isfinite(values)
    if bad.any():
        if policy.mode == "fail":
            i, j = np.argwhere(bad)[0]
            raise MissingValueError(f"missing value at row {i}, column {selected_columns[j]!r}")
        if policy.mode == "forward_fill":
            for j, name in enumerate(selected_columns):
                if bad[0, j]:
                    raise MissingValueError(f"cannot forward-fill column {name!r}: first row missing")
            for i, j in np.argwhere(bad):
                values[i, j] = values[i - 1, j]
                msg = f"forward_fill row={i} column={selected_columns[j]}"
                events.append(msg)
                log.info(msg)
        else:
            keep = ~bad.any(axis=1)
            for i in np.flatnonzero(~keep):
                msg = f"drop_row row={i} column={','.join(selected_columns[j] for j in np.flatnonzero(bad[i]))}"
                events.append(msg)
                log.info(msg)
            stamps = [s for s, k in zip(stamps, keep) if k]
            values = values[keep]
    return LoadTable(timestamps=stamps, series_names=list(selected_columns), values=values,
                     step_seconds=step if step is not None else float("nan"), events=events)


def write_wide_csv(path, table: LoadTable, timestamp_column: str = "utc_timestamp") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([timestamp_column] + list(table.series_names))
        for ts, row in zip(table.timestamps, table.values):
            w.writerow([ts.strftime("%Y-%m-%dT%H:%M:%SZ")] + [repr(float(v)) for v in row])


def table_from_array(values, start: datetime | None = None, step_seconds: int = 3600,
                     names=None) -> LoadTable:
    """Wrap an (n, K) array as a regularly spaced table (synthetic data, tests)."""
    values = np.asarray(values, dtype=float)
    start = datetime(2006, 1, 1, tzinfo=timezone.utc) if start is None else start
    stamps = [start + timedelta(seconds=step_seconds * i) for i in range(values.shape[0])]
    names = [f"S{j + 1}_load_actual_entsoe_transparency" for j in range(values.shape[1])] \
        if names is None else list(names)
    return LoadTable(stamps, names, values, float(step_seconds))


def warmup_horizon(spec: SeasonalVarxSpec) -> int:
    """Rows consumed before the first yielded pair: p1 + period * p2_seasonal - 1 (at least the max lag)."""
    return max(spec.max_lag, spec.p1 + spec.period * spec.p2_seasonal - 1)


class _Replay:
    def __init__(self, table: LoadTable, spec: SeasonalVarxSpec):
        if spec.K != table.values.shape[1]:
            raise IngestError(f"spec has K={spec.K} but table has {table.values.shape[1]} columns")
        self.horizon = warmup_horizon(spec)
        if len(table) <= self.horizon:
            raise TooShortError(f"table of {len(table)} rows is too short (warm-up {self.horizon})")
        self.table, self.spec = table, spec
        self.buffer: deque = deque(maxlen=spec.max_lag)
        self.max_buffer = 0
        self._gen = self._generate()

    def __iter__(self):
        return self

    def __next__(self):
        return next(self._gen)

    def _generate(self):
        ylags, _ = covariate_lags(self.spec)
        for t, row in enumerate(self.table.values):
            if t >= self.horizon:
                x = np.concatenate([self.buffer[-lag] for lag in ylags])
                yield StreamPoint(t, row.copy()), Covariate(x=x, t=t)
            self.buffer.append(row)
            self.max_buffer = max(self.max_buffer, len(self.buffer))


def replay(table: LoadTable, spec: SeasonalVarxSpec):
    """Iterate (StreamPoint, Covariate) pairs past the warm-up horizon.

    Only the last ``spec.max_lag`` rows are buffered.
    """
    return _Replay(table, spec)


def replay_arrays(table: LoadTable, spec: SeasonalVarxSpec):
    """Materialize replay into (X, Y, t) arrays."""
    xs, ys, ts = [], [], []
    for pt, cov in replay(table, spec):
        xs.append(cov.x)
        ys.append(pt.y)
        ts.append(pt.t)
    return np.array(xs), np.array(ys), np.array(ts)
