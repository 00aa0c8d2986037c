"""Synthetic markets with a known lead-lag structure.

Every investor holds every hub with a large value and a random handful of
successor stocks with small values, so the projected network after a high
quantile filter is dominated by hub -> successor edges. On the crash day
each hub's level drifts down from a gap-down open; successors follow the
average hub level of the previous minute, amplified three times, plus a
random-walk disturbance.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .ingest import DEFAULT_CALENDAR, HoldingRecord, SessionCalendar, StockLabel

logger = logging.getLogger(__name__)

SECTORS = ("Financials", "Industrials", "Materials", "Consumer", "Technology")
STYLES = ("large-value", "large-growth", "mid-balance", "small-growth")


@dataclass
class SyntheticMarket:
    hubs: list[str]
    successors: list[str]
    holdings: list[HoldingRecord]
    labels: list[StockLabel]
    prev_close: dict[str, float]
    levels: dict[str, np.ndarray]
    trade_date: date
    snapshot_date: date
    suspended: list[str] = field(default_factory=list)

    @property
    def stocks(self) -> list[str]:
        return self.hubs + self.successors

    def prices(self, stock: str) -> np.ndarray:
        return self.prev_close[stock] * (1.0 + self.levels[stock])


def _ticker(i: int, hub: bool) -> str:
    return f"{600000 + i:06d}.SH" if hub else f"{1 + i:06d}.SZ"


def make_market(n_hubs: int = 5, n_successors: int = 195, n_investors: int = 20,
                holdings_per_investor: int = 40, amplification: float = 3.0,
                hub_sigma: float = 4e-4, noise_sigma: float = 2e-4,
                trade_date: date = date(2015, 6, 26), snapshot_date: date = date(2015, 3, 31),
                calendar: SessionCalendar = DEFAULT_CALENDAR, seed: int = 0) -> SyntheticMarket:
    rng = np.random.default_rng(seed)
    hubs = [_ticker(i, True) for i in range(n_hubs)]
    succ = [_ticker(i, False) for i in range(n_successors)]

    records = []
    for m in range(n_investors):
        manager = f"M{m:03d}"
        picks = rng.choice(n_successors, size=min(holdings_per_investor, n_successors), replace=False)
        book = [(h, int(rng.integers(50_000_000, 100_000_000)) * 100) for h in hubs]
        book += [(succ[j], int(rng.integers(100_000, 1_000_000)) * 100) for j in picks]
        for stock, cents in book:
            # split across two funds to exercise aggregation
            part = cents // 3
            records.append(HoldingRecord(f"F{m:03d}A", manager, stock, cents - part, snapshot_date))
            records.append(HoldingRecord(f"F{m:03d}B", manager, stock, part, snapshot_date))

    stocks = hubs + succ
    labels = [StockLabel(s, SECTORS[i % len(SECTORS)], STYLES[(i // 2) % len(STYLES)],
                         float(rng.integers(1, 100)) * 1e9 if s in hubs else float(rng.integers(1, 50)) * 1e8)
              for i, s in enumerate(stocks)]
    prev_close = {s: float(np.round(rng.uniform(5, 50), 2)) for s in stocks}

    n = calendar.minutes
    t = np.arange(1, n + 1) / n
    levels = {}
    hub_levels = np.empty((n_hubs, n))
    for k, h in enumerate(hubs):
        gap = -rng.uniform(0.003, 0.008)
        drift = -rng.uniform(0.01, 0.02)
        hub_levels[k] = gap + drift * t + np.cumsum(rng.normal(0.0, hub_sigma, n))
        levels[h] = hub_levels[k]
    avg = hub_levels.mean(axis=0)
    lagged = np.concatenate([[avg[0]], avg[:-1]])
    for s in succ:
        level = amplification * lagged + np.cumsum(rng.normal(0.0, noise_sigma, n))
        levels[s] = np.maximum(level, -0.0999)
    return SyntheticMarket(hubs, succ, records, labels, prev_close, levels, trade_date, snapshot_date)


def write_market(market: SyntheticMarket, directory: str | Path, filter_k: float = 0.94,
                 calendar: SessionCalendar = DEFAULT_CALENDAR, missing_rate: float = 0.0,
                 seed: int = 0) -> Path:
    """Write holdings, minute bars, closes, labels and a run config; return the config path.

    ``missing_rate`` drops that share of minute ticks at random so gap
    handling is exercised.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    with (out / "holdings.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fund_id", "manager_id", "stock_id", "market_value", "as_of_date"])
        for r in market.holdings:
            w.writerow([r.fund_id, r.manager_id, r.stock_id, f"{r.value_cents // 100}.{r.value_cents % 100:02d}",
                        r.as_of_date.isoformat()])

    with (out / "labels.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stock_id", "sector", "style", "market_value"])
        for lab in market.labels:
            w.writerow([lab.stock_id, lab.sector, lab.style, repr(lab.market_value)])

    prev_day = market.trade_date - timedelta(days=1)
    with (out / "eod.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stock_id", "date", "close"])
        for s in market.stocks:
            w.writerow([s, prev_day.isoformat(), f"{market.prev_close[s]:.2f}"])
            w.writerow([s, market.trade_date.isoformat(), f"{market.prices(s)[-1]:.2f}"])

    labels = calendar.labels()
    with (out / "minute_bars.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stock_id", "date", "time", "last_price"])
        day = market.trade_date.isoformat()
        for s in market.stocks:
            px = market.prices(s)
            keep = rng.random(px.size) >= missing_rate
            keep[0] = True
            for i in np.flatnonzero(keep):
                w.writerow([s, day, labels[i], f"{px[i]:.6f}"])

    cfg = out / "run.cfg"
    cfg.write_text(
        "# synthetic market run\n"
        "holdings = holdings.csv\n"
        "minute_bars = minute_bars.csv\n"
        "eod = eod.csv\n"
        "labels = labels.csv\n"
        f"snapshot_date = {market.snapshot_date.isoformat()}\n"
        f"crash_dates = {market.trade_date.isoformat()}\n"
        f"filter_k = {filter_k}\n"
        "window_minutes = 10\n"
        "top_n = 5\n"
        "trials = 500\n"
        "seed = 0\n"
        "average_sample_size = 2000\n"
        "output_dir = out\n"
    )
    logger.info("synthetic market written to %s", out)
    return cfg
