"""Parsing and normalization of holdings, minute-bar, end-of-day and label files.

Currency amounts are carried as integer cents everywhere so that aggregation
and the downstream edge weights are exact.
"""
from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, time
from decimal import Decimal, InvalidOperation, ROUND_HALF_UP
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

HOLDINGS_COLUMNS = ("fund_id", "manager_id", "stock_id", "market_value", "as_of_date")
MINUTE_COLUMNS = ("stock_id", "date", "time", "last_price")
EOD_COLUMNS = ("stock_id", "date", "close")
LABEL_COLUMNS = ("stock_id", "sector", "style")


class SchemaError(ValueError):
    """A required column is missing from an input file."""


@dataclass(frozen=True)
class HoldingRecord:
    fund_id: str
    manager_id: str
    stock_id: str
    value_cents: int
    as_of_date: date


@dataclass(frozen=True)
class AggregatedHolding:
    manager_id: str
    stock_id: str
    value_cents: int
    as_of_date: date


@dataclass(frozen=True)
class StockLabel:
    stock_id: str
    sector: str
    style: str
    market_value: float | None = None


@dataclass(frozen=True)
class Rejection:
    row: int
    reason: str

    def to_json(self) -> str:
        return json.dumps({"row": self.row, "reason": self.reason}, sort_keys=True)


@dataclass
class ParseResult:
    """Accepted records of one file plus the rows that were turned away."""

    records: list
    rejections: list[Rejection] = field(default_factory=list)

    @property
    def accepted(self) -> int:
        return len(self.records)

    @property
    def rejected(self) -> int:
        return len(self.rejections)


def to_cents(text: str) -> int:
    """Parse a decimal currency string into integer cents (half-up rounding)."""
    value = Decimal(text.strip())
    if not value.is_finite():
        raise InvalidOperation(text)
    return int((value * 100).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def format_cents(cents: int) -> str:
    sign = "-" if cents < 0 else ""
    whole, frac = divmod(abs(cents), 100)
    return f"{sign}{whole}.{frac:02d}"


def _resolve_columns(header: Sequence[str], required: Sequence[str],
                     schema: Mapping[str, str] | None, path: Path) -> dict[str, int]:
    schema = dict(schema or {})
    stripped = [h.strip() for h in header]
    positions = {}
    missing = []
    for name in required:
        actual = schema.get(name, name)
        if actual in stripped:
            positions[name] = stripped.index(actual)
        else:
            missing.append(actual)
    if missing:
        raise SchemaError(f"{path}: missing required column(s) {missing}")
    return positions


def _read_rows(path: Path, required: Sequence[str], schema: Mapping[str, str] | None = None):
    """Yield (row_number, field dict | None) pairs; None marks a malformed row.

    Row numbers are 1-based file line numbers, so the header is row 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        cols = _resolve_columns(header, required, schema, path)
        width = len(header)
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                yield lineno, None
                continue
            yield lineno, {name: row[i].strip() for name, i in cols.items()}


def parse_holdings(path: str | Path, schema: Mapping[str, str] | None = None) -> ParseResult:
    """Read a holdings CSV into deduplicated :class:`HoldingRecord` objects.

    ``schema`` maps canonical column names to the header names used by the
    file. Rows that fail validation are returned as rejections and logged;
    zero-valued holdings are dropped the same way.
    """
    records: list[HoldingRecord] = []
    rejections: list[Rejection] = []
    seen: set[tuple[str, str, date]] = set()

    def reject(row: int, reason: str) -> None:
        rejections.append(Rejection(row, reason))
        logger.info("holdings row %d rejected: %s", row, reason)

    for lineno, fields in _read_rows(path, HOLDINGS_COLUMNS, schema):
        if fields is None:
            reject(lineno, "malformed row")
            continue
        if not fields["fund_id"] or not fields["manager_id"] or not fields["stock_id"]:
            reject(lineno, "empty identifier")
            continue
        try:
            cents = to_cents(fields["market_value"])
        except (InvalidOperation, ValueError):
            reject(lineno, "unparsable numeric")
            continue
        if cents < 0:
            reject(lineno, "negative value")
            continue
        if cents == 0:
            reject(lineno, "zero value")
            continue
        try:
            as_of = date.fromisoformat(fields["as_of_date"])
        except ValueError:
            reject(lineno, "unparsable date")
            continue
        key = (fields["fund_id"], fields["stock_id"], as_of)
        if key in seen:
            reject(lineno, "duplicate record")
            continue
        seen.add(key)
        records.append(HoldingRecord(fields["fund_id"], fields["manager_id"],
                                     fields["stock_id"], cents, as_of))
    return ParseResult(records, rejections)


def write_holdings(records: Iterable[HoldingRecord], path: str | Path) -> None:
    """Emit records in the canonical holdings layout (re-parseable)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HOLDINGS_COLUMNS)
        for r in records:
            writer.writerow([r.fund_id, r.manager_id, r.stock_id,
                             format_cents(r.value_cents), r.as_of_date.isoformat()])


def write_rejections(rejections: Iterable[Rejection], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rej in rejections:
            fh.write(rej.to_json() + "\n")


def aggregate_by_manager(records: Iterable[HoldingRecord]) -> list[AggregatedHolding]:
    """Sum fund holdings up to their management company.

    Output is sorted by (as_of_date, manager_id, stock_id), which makes the
    function independent of input order.
    """
    totals: dict[tuple[date, str, str], int] = defaultdict(int)
    for r in records:
        totals[(r.as_of_date, r.manager_id, r.stock_id)] += r.value_cents
    return [AggregatedHolding(m, s, v, d)
            for (d, m, s), v in sorted(totals.items()) if v > 0]


def write_aggregated(holdings: Iterable[AggregatedHolding], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("manager_id", "stock_id", "market_value", "as_of_date"))
        for h in holdings:
            writer.writerow([h.manager_id, h.stock_id, format_cents(h.value_cents),
                             h.as_of_date.isoformat()])


def read_aggregated(path: str | Path) -> list[AggregatedHolding]:
    out = []
    for lineno, f in _read_rows(path, ("manager_id", "stock_id", "market_value", "as_of_date")):
        if f is None:
            raise ValueError(f"{path}: malformed row {lineno}")
        out.append(AggregatedHolding(f["manager_id"], f["stock_id"], to_cents(f["market_value"]),
                                     date.fromisoformat(f["as_of_date"])))
    return out


# ---------------------------------------------------------------- prices


@dataclass(frozen=True)
class SessionCalendar:
    """Intraday trading windows; minutes are labelled by their start time.

    A minute ``t`` belongs to a window ``(open, close)`` when
    ``open <= t < close``. The default is the Shanghai/Shenzhen continuous
    session, 240 minutes in total.
    """

    windows: tuple[tuple[time, time], ...] = ((time(9, 30), time(11, 30)),
                                              (time(13, 0), time(15, 0)))

    @property
    def minutes(self) -> int:
        return sum(_mins(c) - _mins(o) for o, c in self.windows)

    def slot(self, t: time) -> int | None:
        m = _mins(t)
        offset = 0
        for o, c in self.windows:
            if _mins(o) <= m < _mins(c):
                return offset + m - _mins(o)
            offset += _mins(c) - _mins(o)
        return None

    def labels(self) -> list[str]:
        out = []
        for o, c in self.windows:
            for m in range(_mins(o), _mins(c)):
                out.append(f"{m // 60:02d}:{m % 60:02d}")
        return out

    @classmethod
    def parse(cls, text: str) -> "SessionCalendar":
        """Parse ``"09:30-11:30,13:00-15:00"``."""
        windows = []
        for part in text.split(","):
            o, c = part.strip().split("-")
            windows.append((time.fromisoformat(o.strip()), time.fromisoformat(c.strip())))
        return cls(tuple(windows))

    def __str__(self) -> str:
        return ",".join(f"{o:%H:%M}-{c:%H:%M}" for o, c in self.windows)


def _mins(t: time) -> int:
    return t.hour * 60 + t.minute


DEFAULT_CALENDAR = SessionCalendar()


@dataclass
class MinuteBarSeries:
    """Last price per session minute for one stock on one day.

    ``prices`` has one slot per calendar minute, NaN where no tick arrived.
    """

    stock_id: str
    trade_date: date
    prices: np.ndarray
    prev_close: float | None

    @property
    def missing_minutes(self) -> int:
        return int(np.isnan(self.prices).sum())

    @property
    def usable(self) -> bool:
        return self.prev_close is not None and self.prev_close > 0

    @property
    def suspended(self) -> bool:
        return bool(np.isnan(self.prices).all())


def parse_eod(path: str | Path) -> dict[str, dict[date, float]]:
    """Read end-of-day closes into ``{stock_id: {date: close}}``."""
    closes: dict[str, dict[date, float]] = defaultdict(dict)
    for lineno, f in _read_rows(path, EOD_COLUMNS):
        if f is None:
            logger.info("eod row %d rejected: malformed row", lineno)
            continue
        try:
            d = date.fromisoformat(f["date"])
            px = float(f["close"])
        except ValueError:
            logger.info("eod row %d rejected: unparsable field", lineno)
            continue
        if not np.isfinite(px) or px <= 0:
            logger.info("eod row %d rejected: non-positive price", lineno)
            continue
        closes[f["stock_id"]][d] = px
    return dict(closes)


def previous_close(eod: Mapping[str, Mapping[date, float]], stock_id: str, day: date) -> float | None:
    """Close on the latest trading date strictly before ``day``."""
    history = eod.get(stock_id)
    if not history:
        return None
    earlier = [d for d in history if d < day]
    if not earlier:
        return None
    return history[max(earlier)]


def parse_minute_bars(path: str | Path, calendar: SessionCalendar = DEFAULT_CALENDAR,
                      eod: Mapping[str, Mapping[date, float]] | None = None,
                      universe: Iterable[str] | None = None) -> list[MinuteBarSeries]:
    """Build one :class:`MinuteBarSeries` per (stock, date) in a minute-bar CSV.

    Out-of-session ticks are discarded; when several ticks share a minute the
    last one in file order wins. Gaps stay NaN. If ``universe`` is given,
    stocks of the universe without any tick on a date in the file get a
    fully-missing (suspended) series. Series without a previous close are
    kept but flagged ``usable == False``.
    """
    n = calendar.minutes
    grid: dict[tuple[date, str], np.ndarray] = {}
    dropped = 0
    for lineno, f in _read_rows(path, MINUTE_COLUMNS):
        if f is None:
            logger.info("minute row %d rejected: malformed row", lineno)
            continue
        try:
            d = date.fromisoformat(f["date"])
            t = time.fromisoformat(f["time"])
            px = float(f["last_price"])
        except ValueError:
            logger.info("minute row %d rejected: unparsable field", lineno)
            continue
        if not np.isfinite(px) or px <= 0:
            logger.info("minute row %d rejected: non-positive price", lineno)
            continue
        slot = calendar.slot(t)
        if slot is None:
            dropped += 1
            continue
        key = (d, f["stock_id"])
        arr = grid.get(key)
        if arr is None:
            arr = grid[key] = np.full(n, np.nan)
        arr[slot] = px
    if dropped:
        logger.debug("%d out-of-session ticks discarded", dropped)

    if universe is not None:
        days = {d for d, _ in grid}
        for d in days:
            for s in universe:
                grid.setdefault((d, s), np.full(n, np.nan))

    eod = eod or {}
    out = []
    for (d, s) in sorted(grid):
        pc = previous_close(eod, s, d)
        if pc is None:
            logger.warning("%s on %s has no previous close; series unusable", s, d)
        out.append(MinuteBarSeries(s, d, grid[(d, s)], pc))
    return out


def parse_labels(path: str | Path) -> list[StockLabel]:
    """Read sector/style labels; an optional ``market_value`` column is honoured."""
    out: dict[str, StockLabel] = {}
    with Path(path).open(newline="", encoding="utf-8-sig") as fh:
        has_mv = "market_value" in [h.strip() for h in (fh.readline().split(","))]
    required = LABEL_COLUMNS + (("market_value",) if has_mv else ())
    for lineno, f in _read_rows(path, required):
        if f is None:
            logger.info("label row %d rejected: malformed row", lineno)
            continue
        if f["stock_id"] in out:
            logger.info("label row %d rejected: duplicate stock %s", lineno, f["stock_id"])
            continue
        mv = None
        if has_mv and f["market_value"]:
            try:
                mv = float(f["market_value"])
            except ValueError:
                logger.info("label row %d: unparsable market value ignored", lineno)
        out[f["stock_id"]] = StockLabel(f["stock_id"], f["sector"], f["style"], mv)
    return [out[k] for k in sorted(out)]
