"""Hour-gridded series containers and the transforms every other module consumes.

Time is always UTC epoch seconds (ints). An hour bucket is
``ts - ts % 3600``; a series is a dense grid anchored at ``start_hour`` so the
timestamp of index ``i`` is ``start_hour + 3600 * i``. Gaps never drop grid
points: they appear as points flagged ``MISSING`` (value NaN) so alignment
stays trivial.

All containers are immutable after construction. Operations are pure
functions and safe to share across threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, GridMismatch, LagTooLarge, NonPositivePrice

HOUR = 3600


def hour_bucket(epoch_seconds: int) -> int:
    """Floor a timestamp to the start of its UTC hour."""
    if epoch_seconds < 0:
        raise ValueError("epoch timestamps must be nonnegative")
    return epoch_seconds - epoch_seconds % HOUR


def is_hour_aligned(epoch_seconds: int) -> bool:
    return epoch_seconds >= 0 and epoch_seconds % HOUR == 0


class Flag(enum.IntEnum):
    """Per-point provenance of a series value."""

    OBSERVED = 0
    FORWARD_FILLED = 1
    CLAMPED = 2
    MISSING = 3


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class HourlySeries:
    """One named variable on a dense hourly grid with per-point flags."""

    name: str
    start_hour: int
    values: np.ndarray
    flags: np.ndarray

    def __post_init__(self):
        if not is_hour_aligned(self.start_hour):
            raise ValueError(f"start_hour {self.start_hour} is not aligned to an hour")
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        flags = np.ascontiguousarray(self.flags, dtype=np.uint8)
        if values.ndim != 1 or flags.ndim != 1:
            raise ValueError("values and flags must be one-dimensional")
        if len(values) != len(flags):
            raise ValueError("values and flags must have equal length")
        if flags.size and flags.max() > Flag.MISSING:
            raise ValueError("unknown flag value")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "flags", _frozen(flags))

    def __len__(self) -> int:
        return len(self.values)

    def timestamps(self) -> np.ndarray:
        """Epoch seconds of every grid point; consecutive entries differ by 3600."""
        return self.start_hour + HOUR * np.arange(len(self.values), dtype=np.int64)

    def missing_mask(self) -> np.ndarray:
        return self.flags == Flag.MISSING

    def flag_counts(self) -> dict[str, int]:
        return {f.name.lower(): int(np.count_nonzero(self.flags == f)) for f in Flag}

    def with_name(self, name: str) -> "HourlySeries":
        return HourlySeries(name, self.start_hour, self.values, self.flags)


def full_series(name: str, start_hour: int, values: np.ndarray,
                flag: Flag = Flag.OBSERVED) -> HourlySeries:
    """Series with one flag everywhere."""
    values = np.asarray(values, dtype=np.float64)
    return HourlySeries(name, start_hour, values,
                        np.full(len(values), int(flag), dtype=np.uint8))


@dataclass(frozen=True)
class HourlyPanel:
    """Aligned collection of named HourlySeries over a common grid.

    ``estimation_mask`` is False at least wherever any column is MISSING;
    callers may exclude further points (warm-up regions) at assembly time.
    """

    start_hour: int
    length: int
    columns: dict[str, HourlySeries] = field(default_factory=dict)
    estimation_mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not is_hour_aligned(self.start_hour):
            raise ValueError("panel start_hour is not aligned to an hour")
        names = list(self.columns)
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names")
        for name, col in self.columns.items():
            if col.start_hour != self.start_hour or len(col) != self.length:
                raise GridMismatch(f"column {name!r} is not on the panel grid")
        any_missing = np.zeros(self.length, dtype=bool)
        for col in self.columns.values():
            any_missing |= col.missing_mask()
        if self.estimation_mask is None:
            mask = ~any_missing
        else:
            mask = np.ascontiguousarray(self.estimation_mask, dtype=bool)
            if len(mask) != self.length:
                raise ValueError("estimation_mask length does not match the grid")
            if np.any(mask & any_missing):
                raise ValueError("estimation_mask is true at a missing point")
        object.__setattr__(self, "estimation_mask", _frozen(mask))

    def timestamps(self) -> np.ndarray:
        return self.start_hour + HOUR * np.arange(self.length, dtype=np.int64)

    def column_names(self) -> list[str]:
        return list(self.columns)

    def __getitem__(self, name: str) -> HourlySeries:
        return self.columns[name]


def _combine_parent_flags(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Flag for a point derived from two parents: worst provenance wins."""
    out = np.maximum(a, b).astype(np.uint8)
    # CLAMPED/FORWARD_FILLED keep their ordering from Flag; MISSING dominates.
    return out


def log_returns(prices: HourlySeries) -> HourlySeries:
    """First difference of the natural log of an hourly price series.

    Output has length ``len(prices) - 1`` and starts one hour later. A return
    is flagged FORWARD_FILLED when either parent price was, and MISSING when
    either parent is missing.
    """
    if len(prices) < 2:
        raise EmptyInput("need at least two price points")
    vals = prices.values
    flags = prices.flags
    defined = flags != Flag.MISSING
    bad = defined & ~(vals > 0)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise NonPositivePrice(idx, float(vals[idx]))
    with np.errstate(invalid="ignore", divide="ignore"):
        logp = np.where(defined, np.log(np.where(defined, vals, 1.0)), np.nan)
    r = logp[1:] - logp[:-1]
    rflags = _combine_parent_flags(flags[1:], flags[:-1])
    r = np.where(rflags == Flag.MISSING, np.nan, r)
    return HourlySeries("r", prices.start_hour + HOUR, r, rflags)


def resample_last(ticks, name: str = "last",
                  max_fill_hours: int | None = None) -> HourlySeries:
    """Hourly series taking the last tick of each hour bucket.

    Empty buckets between the first and last tick are forward-filled from the
    previous bucket and flagged. When ``max_fill_hours`` is given, runs of
    consecutive filled buckets longer than that are marked MISSING instead:
    filling a week-long outage would fabricate flat prices.
    """
    ticks = list(ticks)
    if not ticks:
        raise EmptyInput("no ticks")
    first = hour_bucket(ticks[0][0])
    last = hour_bucket(ticks[-1][0])
    n = (last - first) // HOUR + 1
    values = np.full(n, np.nan)
    flags = np.full(n, int(Flag.MISSING), dtype=np.uint8)
    prev_ts = None
    for ts, v in ticks:
        if prev_ts is not None and ts < prev_ts:
            raise ValueError("ticks must be sorted by time")
        prev_ts = ts
        i = (hour_bucket(ts) - first) // HOUR
        values[i] = v
        flags[i] = Flag.OBSERVED
    # forward fill, tracking run length of consecutive fills
    run = 0
    for i in range(1, n):
        if flags[i] == Flag.MISSING:
            run += 1
            values[i] = values[i - 1]
            flags[i] = Flag.FORWARD_FILLED
        else:
            if max_fill_hours is not None and run > max_fill_hours:
                values[i - run:i] = np.nan
                flags[i - run:i] = Flag.MISSING
            run = 0
    if max_fill_hours is not None and run > max_fill_hours:
        values[n - run:n] = np.nan
        flags[n - run:n] = Flag.MISSING
    return HourlySeries(name, first, values, flags)


def resample_sum(ticks, name: str = "sum") -> HourlySeries:
    """Hourly series summing all ticks in each hour bucket; empty hours are 0."""
    ticks = list(ticks)
    if not ticks:
        raise EmptyInput("no ticks")
    first = hour_bucket(ticks[0][0])
    last = hour_bucket(ticks[-1][0])
    n = (last - first) // HOUR + 1
    values = np.zeros(n)
    prev_ts = None
    for ts, v in ticks:
        if prev_ts is not None and ts < prev_ts:
            raise ValueError("ticks must be sorted by time")
        prev_ts = ts
        if not math.isfinite(v):
            raise ValueError(f"non-finite tick value {v!r}")
        values[(hour_bucket(ts) - first) // HOUR] += v
    return HourlySeries(name, first, values,
                        np.full(n, int(Flag.OBSERVED), dtype=np.uint8))


def safe_log(series: HourlySeries, floor: float) -> HourlySeries:
    """ln(max(v, floor)) pointwise; points below the floor are flagged CLAMPED.

    Total on all finite inputs; the clamp count is recoverable from the flags.
    """
    if not floor > 0:
        raise ValueError("floor must be positive")
    vals = series.values
    flags = series.flags.copy()
    missing = series.missing_mask()
    clamped = ~missing & (vals < floor)
    out = np.where(missing, np.nan, np.log(np.maximum(np.where(missing, floor, vals), floor)))
    flags[clamped] = Flag.CLAMPED
    return HourlySeries(f"log{series.name}", series.start_hour, out, flags)


def lag(series: HourlySeries, k: int) -> HourlySeries:
    """Shift values forward by k hours on the same grid; first k points MISSING."""
    if k <= 0:
        raise ValueError("lag order must be positive")
    if k >= len(series):
        raise LagTooLarge(f"lag {k} with only {len(series)} points")
    values = np.concatenate([np.full(k, np.nan), series.values[:-k]])
    flags = np.concatenate([np.full(k, int(Flag.MISSING), dtype=np.uint8),
                            series.flags[:-k]])
    return HourlySeries(series.name, series.start_hour, values, flags)
