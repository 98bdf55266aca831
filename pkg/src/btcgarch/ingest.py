"""Parsers for the three raw CSV source shapes, regressor derivation, and
assembly of the aligned hourly panel.

Source formats (UTF-8, comma-delimited, ``.`` or empty field = missing):

* trades:  ``unix_ts,price_usd,volume_btc``
* chain:   ``unix_ts,tx_volume_btc,tx_count,unique_addresses,avg_block_time_minutes``
* daily:   ``date,total_btc,tips_rate``  with ISO ``YYYY-MM-DD`` dates

Malformed rows are never dropped silently: every parser returns the valid
records together with a rejects list naming the line and the reason.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import (BadHeader, GridMismatch, MissingAnchor, NoAnchorBeforeWindow,
                     NonPositiveBlockTime, NonPositiveStock, NoValidRows,
                     WindowUncovered)
from .series import (HOUR, Flag, HourlyPanel, HourlySeries, hour_bucket,
                     log_returns, resample_last, resample_sum, safe_log)

DAY = 86400

TRADES_HEADER = ["unix_ts", "price_usd", "volume_btc"]
CHAIN_HEADER = ["unix_ts", "tx_volume_btc", "tx_count", "unique_addresses",
                "avg_block_time_minutes"]
DAILY_HEADER = ["date", "total_btc", "tips_rate"]

PANEL_COLUMNS = ["r", "logvolume", "logno", "logvelocity", "logvelocity2",
                 "logtot_btc", "logr_rate"]


@dataclass(frozen=True)
class TradeRecord:
    time: int
    price_usd: float
    volume_btc: float


@dataclass(frozen=True)
class ChainRecord:
    time: int
    tx_volume_btc: float
    tx_count: int
    unique_addresses: int
    avg_block_time_minutes: float


@dataclass(frozen=True)
class DailyRecord:
    day: int  # UTC midnight epoch seconds
    total_btc: float | None
    tips_rate: float | None


@dataclass(frozen=True)
class RejectedRow:
    line: int
    reason: str
    raw: str


@dataclass(frozen=True)
class HalvingSchedule:
    """Block subsidy schedule: initial reward halved every `interval` blocks."""

    initial_reward: float = 50.0
    interval_blocks: int = 210_000

    def reward_at_stock(self, stock: float) -> float:
        reward = self.initial_reward
        boundary = self.interval_blocks * reward
        while reward > 0 and stock >= boundary:
            reward /= 2.0
            boundary += self.interval_blocks * reward
            if reward < 1e-12:
                return 0.0
        return reward

    def next_boundary(self, stock: float) -> float:
        reward = self.initial_reward
        boundary = self.interval_blocks * reward
        while reward > 0 and stock >= boundary:
            reward /= 2.0
            boundary += self.interval_blocks * reward
            if reward < 1e-12:
                return math.inf
        return boundary if reward > 0 else math.inf


@dataclass(frozen=True)
class PanelRecipe:
    """Everything build_panel needs: sources, window, and fill policies."""

    trades_path: str
    chain_path: str
    daily_path: str
    start_hour: int
    end_hour: int  # exclusive
    velocity_variant: str = "v1"
    log_floor: float = 1e-8
    rate_shift: float = 5.0  # percentage points added before logging TIPS
    max_fill_hours: int = 24
    velocity_window_hours: int = 720
    halving: HalvingSchedule = field(default_factory=HalvingSchedule)

    def __post_init__(self):
        if self.start_hour >= self.end_hour:
            raise ValueError("window start must precede window end")
        if self.velocity_variant not in ("v1", "v2"):
            raise ValueError("velocity_variant must be v1 or v2")
        if not self.log_floor > 0:
            raise ValueError("log_floor must be positive")

    @property
    def n_hours(self) -> int:
        return (self.end_hour - self.start_hour) // HOUR


def _open_lines(source):
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline="")
    if isinstance(source, str):  # pragma: no cover - handled above
        return io.StringIO(source)
    return source


def _read_header(reader, expected: list[str], label: str) -> None:
    try:
        header = next(reader)
    except StopIteration:
        raise BadHeader(f"{label}: empty file") from None
    if [h.strip() for h in header] != expected:
        raise BadHeader(f"{label}: expected header {','.join(expected)}, "
                        f"got {','.join(header)}")


def _is_missing(tok: str) -> bool:
    tok = tok.strip()
    return tok == "" or tok == "."


def parse_trades(source) -> tuple[list[TradeRecord], list[RejectedRow]]:
    """Read and validate a trades CSV; returns (time-sorted records, rejects)."""
    records: list[TradeRecord] = []
    rejects: list[RejectedRow] = []
    fh = _open_lines(source)
    try:
        reader = csv.reader(fh)
        _read_header(reader, TRADES_HEADER, "trades")
        for lineno, row in enumerate(reader, start=2):
            raw = ",".join(row)
            if len(row) != 3:
                rejects.append(RejectedRow(lineno, "WrongFieldCount", raw))
                continue
            try:
                ts = int(row[0])
                price = float(row[1])
                vol = float(row[2])
            except ValueError:
                rejects.append(RejectedRow(lineno, "Unparseable", raw))
                continue
            if ts < 0:
                rejects.append(RejectedRow(lineno, "NegativeTimestamp", raw))
            elif not (math.isfinite(price) and math.isfinite(vol)):
                rejects.append(RejectedRow(lineno, "NonFinite", raw))
            elif price <= 0:
                rejects.append(RejectedRow(lineno, "NonPositivePrice", raw))
            elif vol < 0:
                rejects.append(RejectedRow(lineno, "NegativeVolume", raw))
            else:
                records.append(TradeRecord(ts, price, vol))
    finally:
        if isinstance(source, (str, Path)):
            fh.close()
    if not records:
        raise NoValidRows("trades: no valid rows")
    records.sort(key=lambda r: r.time)
    return records, rejects


def parse_chain(source) -> tuple[list[ChainRecord], list[RejectedRow]]:
    """Read and validate a blockchain-statistics CSV."""
    records: list[ChainRecord] = []
    rejects: list[RejectedRow] = []
    fh = _open_lines(source)
    try:
        reader = csv.reader(fh)
        _read_header(reader, CHAIN_HEADER, "chain")
        for lineno, row in enumerate(reader, start=2):
            raw = ",".join(row)
            if len(row) != 5:
                rejects.append(RejectedRow(lineno, "WrongFieldCount", raw))
                continue
            try:
                ts = int(row[0])
                txv = float(row[1])
                txc = int(row[2])
                addr = int(row[3])
                bt = float(row[4])
            except ValueError:
                rejects.append(RejectedRow(lineno, "Unparseable", raw))
                continue
            if ts < 0:
                rejects.append(RejectedRow(lineno, "NegativeTimestamp", raw))
            elif not (math.isfinite(txv) and math.isfinite(bt)):
                rejects.append(RejectedRow(lineno, "NonFinite", raw))
            elif txv < 0 or txc < 0 or addr < 0:
                rejects.append(RejectedRow(lineno, "NegativeCount", raw))
            elif bt <= 0:
                rejects.append(RejectedRow(lineno, "NonPositiveBlockTime", raw))
            else:
                records.append(ChainRecord(ts, txv, txc, addr, bt))
    finally:
        if isinstance(source, (str, Path)):
            fh.close()
    if not records:
        raise NoValidRows("chain: no valid rows")
    records.sort(key=lambda r: r.time)
    return records, rejects


def _parse_date(tok: str) -> int:
    dt = datetime.strptime(tok.strip(), "%Y-%m-%d").replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def parse_daily(source) -> tuple[list[DailyRecord], list[RejectedRow]]:
    """Read and validate the daily macro CSV (total stock, TIPS rate)."""
    records: list[DailyRecord] = []
    rejects: list[RejectedRow] = []
    seen_days: set[int] = set()
    last_stock = -math.inf
    fh = _open_lines(source)
    try:
        reader = csv.reader(fh)
        _read_header(reader, DAILY_HEADER, "daily")
        for lineno, row in enumerate(reader, start=2):
            raw = ",".join(row)
            if len(row) != 3:
                rejects.append(RejectedRow(lineno, "WrongFieldCount", raw))
                continue
            try:
                day = _parse_date(row[0])
            except ValueError:
                rejects.append(RejectedRow(lineno, "BadDate", raw))
                continue
            if day in seen_days:
                rejects.append(RejectedRow(lineno, "DuplicateDate", raw))
                continue
            stock = None
            rate = None
            try:
                if not _is_missing(row[1]):
                    stock = float(row[1])
                if not _is_missing(row[2]):
                    rate = float(row[2])
            except ValueError:
                rejects.append(RejectedRow(lineno, "Unparseable", raw))
                continue
            if stock is None and rate is None:
                rejects.append(RejectedRow(lineno, "AllFieldsMissing", raw))
                continue
            if stock is not None:
                if not math.isfinite(stock) or stock <= 0:
                    rejects.append(RejectedRow(lineno, "NonPositiveStock", raw))
                    continue
                if stock < last_stock:
                    rejects.append(RejectedRow(lineno, "NonMonotoneStock", raw))
                    continue
                last_stock = stock
            if rate is not None and not math.isfinite(rate):
                rejects.append(RejectedRow(lineno, "NonFinite", raw))
                continue
            seen_days.add(day)
            records.append(DailyRecord(day, stock, rate))
    finally:
        if isinstance(source, (str, Path)):
            fh.close()
    if not records:
        raise NoValidRows("daily: no valid rows")
    records.sort(key=lambda r: r.day)
    return records, rejects


def total_stock_hourly(daily_stock: list[DailyRecord], block_time: HourlySeries,
                       schedule: HalvingSchedule | None = None) -> HourlySeries:
    """Hourly total coin stock from daily anchors and block-time data.

    Within each day the stock advances once per minute at
    ``reward / avg_block_time_minutes`` using the era-correct reward for the
    running stock level. At each UTC day start the series re-anchors to the
    daily total when one is available (clamped so the output never decreases
    and never falls below the latest anchor). The value at grid index i is the
    stock after all 60 minutes of that hour.
    """
    schedule = schedule or HalvingSchedule()
    bt = block_time.values
    if np.any(~np.isfinite(bt)) or np.any(bt <= 0):
        raise NonPositiveBlockTime("block-time series must be finite and positive")
    anchors = {rec.day: rec.total_btc for rec in daily_stock
               if rec.total_btc is not None}
    if not anchors:
        raise MissingAnchor("any")
    start = block_time.start_hour
    n = len(block_time)
    first_day = start - start % DAY
    prior = [d for d in anchors if d <= first_day]
    if not prior:
        raise MissingAnchor(datetime.fromtimestamp(first_day, timezone.utc)
                            .strftime("%Y-%m-%d"))
    stock = anchors[max(prior)]
    # integrate any pre-window part of the first day using the first block time
    minutes_before = (start - first_day) // 60
    stock = _advance(stock, minutes_before, float(bt[0]), schedule)
    values = np.empty(n)
    for i in range(n):
        h = start + i * HOUR
        if h % DAY == 0 and h in anchors:
            stock = max(stock, anchors[h])
        stock = _advance(stock, 60, float(bt[i]), schedule)
        values[i] = stock
    return HourlySeries("tot_btc", start, values,
                        np.full(n, int(Flag.OBSERVED), dtype=np.uint8))


def _advance(stock: float, minutes: int, block_time_minutes: float,
             schedule: HalvingSchedule) -> float:
    """Advance the stock by per-minute issuance, respecting halving boundaries."""
    reward = schedule.reward_at_stock(stock)
    boundary = schedule.next_boundary(stock)
    for _ in range(minutes):
        stock += reward / block_time_minutes
        if stock >= boundary:
            reward = schedule.reward_at_stock(stock)
            boundary = schedule.next_boundary(stock)
    return stock


def velocity(tx_volume: HourlySeries, stock: HourlySeries,
             variant: str = "v1", window_hours: int = 720) -> HourlySeries:
    """Hourly coin velocity: on-chain transaction volume over the coin base.

    v1 divides by the end-of-hour stock; v2 divides by the trailing
    ``window_hours`` mean of the stock (an expanding mean over the shorter
    prefix, with those points flagged FORWARD_FILLED as lower-quality).
    """
    if (tx_volume.start_hour != stock.start_hour
            or len(tx_volume) != len(stock)):
        raise GridMismatch("tx_volume and stock are not on the same grid")
    if variant not in ("v1", "v2"):
        raise ValueError("variant must be v1 or v2")
    svals = stock.values
    ok = ~stock.missing_mask()
    if np.any(ok & ~(svals > 0)):
        raise NonPositiveStock("stock must be strictly positive")
    n = len(stock)
    flags = np.maximum(tx_volume.flags, stock.flags).astype(np.uint8)
    if variant == "v1":
        base = svals
        name = "velocity"
    else:
        cs = np.cumsum(svals)
        idx = np.arange(n)
        base = np.where(idx >= window_hours,
                        (cs - np.concatenate([[0.0] * window_hours,
                                              cs[:-window_hours]])[:n]) / window_hours,
                        cs / (idx + 1))
        warm = (idx < window_hours - 1) & (flags == Flag.OBSERVED)
        flags = flags.copy()
        flags[warm] = Flag.FORWARD_FILLED
        name = "velocity2"
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(flags == Flag.MISSING, np.nan, tx_volume.values / base)
    return HourlySeries(name, tx_volume.start_hour, vals, flags)


def forward_fill_daily(daily: list[DailyRecord], field_name: str,
                       start_hour: int, n_hours: int) -> HourlySeries:
    """Hourly series carrying the most recent daily value forward.

    Hours on a day with an observation are OBSERVED; hours past it (missing
    markers, weekends) are FORWARD_FILLED.
    """
    obs = {rec.day: getattr(rec, field_name) for rec in daily
           if getattr(rec, field_name) is not None}
    if not obs:
        raise NoAnchorBeforeWindow(f"no {field_name} values at all")
    days = sorted(obs)
    first_day = start_hour - start_hour % DAY
    prior = [d for d in days if d <= first_day]
    if not prior:
        raise NoAnchorBeforeWindow(
            f"no {field_name} value on or before the window start day")
    values = np.empty(n_hours)
    flags = np.empty(n_hours, dtype=np.uint8)
    current_day = max(prior)
    current = obs[current_day]
    j = days.index(current_day)
    for i in range(n_hours):
        day = (start_hour + i * HOUR) // DAY * DAY
        while j + 1 < len(days) and days[j + 1] <= day:
            j += 1
            current_day = days[j]
            current = obs[current_day]
        values[i] = current
        flags[i] = Flag.OBSERVED if day == current_day else Flag.FORWARD_FILLED
    return HourlySeries(field_name, start_hour, values, flags)


def _window(series: HourlySeries, start_hour: int, n_hours: int) -> HourlySeries:
    """Slice a series to the panel window; raises if not fully covered."""
    offset = (start_hour - series.start_hour) // HOUR
    if start_hour < series.start_hour or offset + n_hours > len(series):
        raise WindowUncovered(
            f"{series.name}: window [{start_hour}, +{n_hours}h) not covered")
    return HourlySeries(series.name, start_hour,
                        series.values[offset:offset + n_hours],
                        series.flags[offset:offset + n_hours])


def _shift(series: HourlySeries, offset: float) -> HourlySeries:
    vals = series.values + offset
    return HourlySeries(series.name, series.start_hour, vals, series.flags)


def _returns_column(prices: HourlySeries) -> HourlySeries:
    """Log returns re-anchored to the full price grid, first point MISSING."""
    r = log_returns(prices)
    values = np.concatenate([[np.nan], r.values])
    flags = np.concatenate([[int(Flag.MISSING)], r.flags]).astype(np.uint8)
    return HourlySeries("r", prices.start_hour, values, flags)


@dataclass(frozen=True)
class IngestResult:
    panel: HourlyPanel
    prices: HourlySeries
    rejects: dict[str, list[RejectedRow]]

    def reject_counts(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.rejects.items()}

    def clamp_counts(self) -> dict[str, int]:
        return {name: col.flag_counts()["clamped"]
                for name, col in self.panel.columns.items()}


def ingest_sources(recipe: PanelRecipe) -> IngestResult:
    """Parse the three sources and assemble the panel plus audit info."""
    trades, rej_t = parse_trades(recipe.trades_path)
    chain, rej_c = parse_chain(recipe.chain_path)
    daily, rej_d = parse_daily(recipe.daily_path)
    start, n = recipe.start_hour, recipe.n_hours

    prices = _window(resample_last(((t.time, t.price_usd) for t in trades),
                                   name="price_usd",
                                   max_fill_hours=recipe.max_fill_hours),
                     start, n)
    xvolume = _window(resample_sum(((t.time, t.volume_btc) for t in trades),
                                   name="volume"), start, n)
    txvol = _window(resample_sum(((c.time, c.tx_volume_btc) for c in chain),
                                 name="txvol"), start, n)
    addresses = _window(resample_sum(((c.time, float(c.unique_addresses))
                                      for c in chain), name="no"), start, n)
    block_time = _window(resample_last(((c.time, c.avg_block_time_minutes)
                                        for c in chain), name="block_time",
                                       max_fill_hours=None), start, n)
    stock = total_stock_hourly(daily, block_time, recipe.halving)
    rate = forward_fill_daily(daily, "tips_rate", start, n)

    floor = recipe.log_floor
    wh = recipe.velocity_window_hours
    cols = {
        "r": _returns_column(prices),
        "logvolume": safe_log(xvolume, floor).with_name("logvolume"),
        "logno": safe_log(addresses, floor).with_name("logno"),
        "logvelocity": safe_log(velocity(txvol, stock, "v1", wh),
                                floor).with_name("logvelocity"),
        "logvelocity2": safe_log(velocity(txvol, stock, "v2", wh),
                                 floor).with_name("logvelocity2"),
        "logtot_btc": safe_log(stock, floor).with_name("logtot_btc"),
        "logr_rate": safe_log(_shift(rate, recipe.rate_shift),
                              floor).with_name("logr_rate"),
    }
    panel = HourlyPanel(start, n, cols)
    return IngestResult(panel, prices,
                        {"trades": rej_t, "chain": rej_c, "daily": rej_d})


def build_panel(recipe: PanelRecipe) -> HourlyPanel:
    """The seven-column aligned regression panel for the recipe's window."""
    return ingest_sources(recipe).panel


def _fmt(x: float) -> str:
    return repr(float(x))


def write_panel_csv(panel: HourlyPanel, path) -> None:
    """Serialize a panel for audit/re-load: hour_ts, columns..., mask."""
    names = [c for c in PANEL_COLUMNS if c in panel.columns]
    names += [c for c in panel.columns if c not in names]
    ts = panel.timestamps()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("hour_ts," + ",".join(names) + ",mask\n")
        for i in range(panel.length):
            cells = [str(int(ts[i]))]
            for name in names:
                col = panel.columns[name]
                cells.append("" if col.flags[i] == Flag.MISSING
                             else _fmt(col.values[i]))
            cells.append("1" if panel.estimation_mask[i] else "0")
            fh.write(",".join(cells) + "\n")


def read_panel_csv(path) -> HourlyPanel:
    """Re-load a serialized panel. Fill/clamp provenance collapses to
    OBSERVED/MISSING; the estimation mask round-trips exactly."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "hour_ts" or header[-1] != "mask":
            raise BadHeader("panel csv must be hour_ts,<columns>...,mask")
        names = header[1:-1]
        rows = list(reader)
    if not rows:
        raise NoValidRows("panel csv has no data rows")
    start = int(rows[0][0])
    n = len(rows)
    mask = np.zeros(n, dtype=bool)
    data = {name: (np.full(n, np.nan), np.full(n, int(Flag.MISSING), dtype=np.uint8))
            for name in names}
    for i, row in enumerate(rows):
        if int(row[0]) != start + i * HOUR:
            raise BadHeader("panel csv grid is not dense hourly")
        for j, name in enumerate(names):
            tok = row[1 + j]
            if tok != "":
                data[name][0][i] = float(tok)
                data[name][1][i] = Flag.OBSERVED
        mask[i] = row[-1] == "1"
    cols = {name: HourlySeries(name, start, vals, flags)
            for name, (vals, flags) in data.items()}
    return HourlyPanel(start, n, cols, mask)
