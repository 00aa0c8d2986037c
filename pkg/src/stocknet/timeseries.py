"""Intraday percentage changes, ten-minute window summaries, hub/successor
scatter data and the two randomization null experiments."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from datetime import date
from decimal import Decimal, ROUND_HALF_UP
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .ingest import DEFAULT_CALENDAR, MinuteBarSeries, SessionCalendar, previous_close
from .metrics import GROUP_LABELS, DegreePartition
from .network import StockNetwork

logger = logging.getLogger(__name__)

CRASH_DATES = (date(2015, 6, 26), date(2015, 6, 29), date(2015, 7, 2), date(2015, 7, 3))


@dataclass
class ChangeSeries:
    stock_id: str
    trade_date: date
    changes: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.changes)


def carry_forward(values: np.ndarray) -> np.ndarray:
    """Fill NaN gaps with the last earlier value; leading gaps stay NaN."""
    valid = ~np.isnan(values)
    idx = np.where(valid, np.arange(values.size), 0)
    np.maximum.accumulate(idx, out=idx)
    out = values[idx]
    if values.size and not valid[0]:
        first = np.argmax(valid) if valid.any() else values.size
        out[:first] = np.nan
    return out


def minute_changes(series: MinuteBarSeries, impute: bool = True) -> ChangeSeries:
    """Change of every minute price against the previous day's close."""
    if not series.usable:
        raise ValueError(f"{series.stock_id} on {series.trade_date}: no previous close")
    prices = carry_forward(series.prices) if impute else series.prices
    return ChangeSeries(series.stock_id, series.trade_date, (prices - series.prev_close) / series.prev_close)


def window_last(changes: ChangeSeries | np.ndarray, window_minutes: int = 10) -> np.ndarray:
    """Change at the last valid minute of each non-overlapping window."""
    x = changes.changes if isinstance(changes, ChangeSeries) else np.asarray(changes, dtype=float)
    blocks = _blocks(x, window_minutes)
    valid = ~np.isnan(blocks)
    last = window_minutes - 1 - np.argmax(valid[:, ::-1], axis=1)
    out = blocks[np.arange(blocks.shape[0]), last]
    out[~valid.any(axis=1)] = np.nan
    return out


def window_mean(changes: ChangeSeries | np.ndarray, window_minutes: int = 10) -> np.ndarray:
    x = changes.changes if isinstance(changes, ChangeSeries) else np.asarray(changes, dtype=float)
    blocks = _blocks(x, window_minutes)
    valid = ~np.isnan(blocks)
    n = valid.sum(axis=1)
    with np.errstate(invalid="ignore"):
        return np.where(n > 0, np.nansum(blocks, axis=1) / np.maximum(n, 1), np.nan)


def _blocks(x: np.ndarray, window_minutes: int) -> np.ndarray:
    if window_minutes <= 0 or x.size % window_minutes:
        raise ValueError(f"window of {window_minutes} minutes does not divide a {x.size}-minute session")
    return x.reshape(-1, window_minutes)


@dataclass
class WindowedChanges:
    """Per-stock window values for one day; rows follow ``stocks``."""

    trade_date: date | None
    window_minutes: int
    stocks: tuple[str, ...]
    values: np.ndarray

    @property
    def n_windows(self) -> int:
        return self.values.shape[1]

    def aligned(self, nodes: Sequence[str]) -> np.ndarray:
        """Rows reordered to ``nodes``; stocks without data become NaN rows."""
        ix = {s: i for i, s in enumerate(self.stocks)}
        out = np.full((len(nodes), self.n_windows), np.nan)
        for k, n in enumerate(nodes):
            i = ix.get(n)
            if i is not None:
                out[k] = self.values[i]
        return out


def day_changes(series: Iterable[MinuteBarSeries], impute: bool = True) -> dict[str, ChangeSeries]:
    """Minute changes for every usable, non-suspended series of one day."""
    out = {}
    for s in series:
        if not s.usable or s.suspended:
            continue
        out[s.stock_id] = minute_changes(s, impute=impute)
    return out


def windowed_changes(changes: Mapping[str, ChangeSeries], window_minutes: int = 10,
                     statistic: str = "last") -> WindowedChanges:
    fn = {"last": window_last, "mean": window_mean}[statistic]
    stocks = tuple(sorted(changes))
    if not stocks:
        raise ValueError("no change series to window")
    values = np.vstack([fn(changes[s], window_minutes) for s in stocks])
    day = next(iter(changes.values())).trade_date
    return WindowedChanges(day, window_minutes, stocks, values)


def window_end_labels(n_windows: int, window_minutes: int,
                      calendar: SessionCalendar = DEFAULT_CALENDAR) -> list[str]:
    labels = calendar.labels()
    out = []
    for w in range(n_windows):
        hh, mm = map(int, labels[(w + 1) * window_minutes - 1].split(":"))
        m = hh * 60 + mm + 1
        out.append(f"{m // 60:02d}:{m % 60:02d}")
    return out


def group_mean_changes(windowed: WindowedChanges, partition: DegreePartition) -> pd.DataFrame:
    """Unweighted mean window value per out-degree group (long format).

    ``mean_change`` is NaN where a group has no valid stock in the window.
    """
    x = windowed.aligned(partition.nodes)
    n_groups = len(GROUP_LABELS)
    counts = np.zeros((n_groups, windowed.n_windows), dtype=np.int64)
    sums = np.zeros((n_groups, windowed.n_windows))
    for g in range(n_groups):
        block = x[partition.groups == g]
        valid = ~np.isnan(block)
        counts[g] = valid.sum(axis=0)
        sums[g] = np.where(valid, block, 0.0).sum(axis=0)
    rows = []
    for w in range(windowed.n_windows):
        for g, label in enumerate(GROUP_LABELS):
            n = int(counts[g, w])
            rows.append((w + 1, label, sums[g, w] / n if n else np.nan, n))
    return pd.DataFrame(rows, columns=["window", "group", "mean_change", "n_stocks"])


@dataclass
class ScatterSeries:
    hub_id: str
    hub_changes: np.ndarray
    successor_means: np.ndarray
    successor_count: int

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.hub_changes.tolist(), self.successor_means.tolist()))


def _top_hubs(src: np.ndarray, n_nodes: int, top_n: int,
              tiebreak: np.ndarray | None = None) -> np.ndarray:
    """Highest out-degree nodes; ties go to the lower id, or the lower ``tiebreak`` key."""
    deg = np.bincount(src, minlength=n_nodes)
    if tiebreak is None:
        return np.argsort(-deg, kind="stable")[:top_n]
    return np.lexsort((tiebreak, -deg))[:top_n]


def _scatter_arrays(x: np.ndarray, src: np.ndarray, tgt: np.ndarray, top_n: int,
                    tiebreak: np.ndarray | None = None):
    """Hub window values and successor means for the ``top_n`` out-degree hubs.

    ``src``/``tgt`` need not be sorted. Returns (hubs, hub_x, succ_mean, succ_count).
    """
    n = x.shape[0]
    hubs = _top_hubs(src, n, top_n, tiebreak)
    hub_x = x[hubs]
    succ_mean = np.full_like(hub_x, np.nan)
    counts = np.zeros(len(hubs), dtype=np.int64)
    for k, h in enumerate(hubs):
        succ = tgt[src == h]
        succ = succ[succ != h]
        counts[k] = succ.size
        block = x[succ]
        valid = ~np.isnan(block)
        nv = valid.sum(axis=0)
        s = np.where(valid, block, 0.0).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            succ_mean[k] = np.where(nv > 0, s / np.maximum(nv, 1), np.nan)
    return hubs, hub_x, succ_mean, counts


def hub_successor_scatter(net: StockNetwork, windowed: WindowedChanges, top_n: int = 5) -> list[ScatterSeries]:
    """Hub change against the mean change of its out-neighbours, per window."""
    positive = int((net.out_degree() > 0).sum())
    if top_n > positive:
        raise ValueError(f"top_n={top_n} exceeds the {positive} nodes with positive out-degree")
    x = windowed.aligned(net.nodes)
    hubs, hub_x, succ_mean, counts = _scatter_arrays(x, net.source, net.target, top_n)
    return [ScatterSeries(net.nodes[h], hub_x[k], succ_mean[k], int(counts[k]))
            for k, h in enumerate(hubs)]


@dataclass
class RandomScatter:
    """Per-trial scatter arrays of a null experiment, shape (trials, top_n, windows)."""

    experiment: str
    hub_changes: np.ndarray
    successor_means: np.ndarray

    @property
    def trials(self) -> int:
        return self.hub_changes.shape[0]

    def mean_series(self) -> list[ScatterSeries]:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            hub = np.nanmean(self.hub_changes, axis=0)
            succ = np.nanmean(self.successor_means, axis=0)
        return [ScatterSeries(f"rank{k + 1}", hub[k], succ[k], 0) for k in range(hub.shape[0])]

    def diagonal_gap(self) -> tuple[float, float]:
        """Mean over trials of (successor mean - hub change) and its standard error.

        Each trial contributes the average gap over all its hubs and windows.
        """
        gap = self.successor_means - self.hub_changes
        per_trial = np.array([np.nanmean(g) if np.isfinite(g).any() else np.nan for g in gap])
        per_trial = per_trial[np.isfinite(per_trial)]
        if per_trial.size < 2:
            return float(per_trial.mean()) if per_trial.size else float("nan"), float("nan")
        return float(per_trial.mean()), float(per_trial.std(ddof=1) / np.sqrt(per_trial.size))


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent stream per (seed, trial) so runs are schedule-independent."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(trial)]))


def sample_simple_digraph(n: int, m: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform simple directed graph on ``n`` nodes with exactly ``m`` edges."""
    total = n * (n - 1)
    if m > total:
        raise ValueError(f"{m} edges do not fit a simple digraph on {n} nodes")
    q = rng.choice(total, size=m, replace=False)
    src = q // (n - 1)
    r = q % (n - 1)
    tgt = r + (r >= src)
    return src.astype(np.int64), tgt.astype(np.int64)


def _run_trials(net: StockNetwork, windowed: WindowedChanges, top_n: int, trials: int,
                seed: int, experiment: str, draw) -> RandomScatter:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    x = windowed.aligned(net.nodes)
    hubs_x = np.empty((trials, top_n, windowed.n_windows))
    succ = np.empty_like(hubs_x)
    for t in range(trials):
        rng = trial_rng(seed, t)
        src, tgt = draw(rng)
        # random tie order keeps hub choice uniform over equal-degree nodes
        _, hx, sm, _ = _scatter_arrays(x, src, tgt, top_n, rng.random(net.node_count))
        hubs_x[t], succ[t] = hx, sm
    return RandomScatter(experiment, hubs_x, succ)


def random_experiment_edges(net: StockNetwork, windowed: WindowedChanges, top_n: int = 5,
                            trials: int = 100, seed: int = 0) -> RandomScatter:
    """Null (1): same node set and edge count, edges placed uniformly at random."""
    n, m = net.node_count, net.edge_count

    return _run_trials(net, windowed, top_n, trials, seed, "random_edges",
                       lambda rng: sample_simple_digraph(n, m, rng))


def random_experiment_nodes(net: StockNetwork, windowed: WindowedChanges, top_n: int = 5,
                            trials: int = 100, seed: int = 0,
                            permutations: Sequence[np.ndarray] | None = None) -> RandomScatter:
    """Null (2): structure kept, node labels permuted uniformly at random.

    ``permutations`` overrides the random draws (one array per trial).
    """
    n = net.node_count

    def draw(rng, _it=iter(permutations) if permutations is not None else None):
        perm = next(_it) if _it is not None else rng.permutation(n)
        return perm[net.source], perm[net.target]

    if permutations is not None:
        trials = len(permutations)
    return _run_trials(net, windowed, top_n, trials, seed, "shuffled_nodes", draw)


def limit_price(prev_close: float, limit: float = 0.10) -> float:
    """Exchange down-limit price, rounded half-up to the cent."""
    raw = Decimal(repr(prev_close)) * (Decimal(1) - Decimal(repr(limit)))
    return float(raw.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def limit_down_counts(series: Iterable[MinuteBarSeries], window_minutes: int = 10,
                      limit: float = 0.10) -> pd.DataFrame:
    """Per window: stocks with a price so far (active) and stocks at the down limit.

    Window-end prices are carried forward; suspended or unusable series are
    not active.
    """
    ends = None
    active = locked = None
    for s in series:
        if not s.usable or s.suspended:
            continue
        px = carry_forward(s.prices)
        if ends is None:
            ends = np.arange(window_minutes - 1, px.size, window_minutes)
            active = np.zeros(ends.size, dtype=np.int64)
            locked = np.zeros(ends.size, dtype=np.int64)
        at_end = px[ends]
        ok = ~np.isnan(at_end)
        active += ok
        locked += ok & (at_end <= limit_price(s.prev_close, limit) + 1e-9)
    if ends is None:
        return pd.DataFrame(columns=["window", "active", "limit_down"])
    return pd.DataFrame({"window": np.arange(1, ends.size + 1), "active": active, "limit_down": locked})


def daily_net_changes(eod: Mapping[str, Mapping[date, float]], day: date) -> dict[str, float]:
    """Close-to-close change of every stock with a close on ``day`` and before it."""
    out = {}
    for stock, history in eod.items():
        if day not in history:
            continue
        prev = previous_close(eod, stock, day)
        if prev:
            out[stock] = (history[day] - prev) / prev
    return out
