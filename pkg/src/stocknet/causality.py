"""Pairwise Granger causality with Toda-Yamamoto lag augmentation, and the
edge-bin, hub and rich-club aggregations built on top of it.

For an ordered pair (x, y) the engine

1. keeps minutes where both series are observed,
2. picks a common lag ``m`` for the bivariate VAR by AIC/BIC, all orders
   being fitted on the same trimmed sample,
3. regresses y on an intercept and ``m + d_max`` lags of y and x,
4. Wald-tests that the first ``m`` x-lag coefficients are zero against a
   chi-square with ``m`` degrees of freedom. The ``d_max`` extra lags are
   never restricted.
"""
from __future__ import annotations

import concurrent.futures as cf
import csv
import logging
import math
import multiprocessing as mp
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import solve_triangular
from scipy.special import chdtrc

from .metrics import RichClubPoint, rich_club_curve, top_by_out_degree
from .network import StockNetwork, nearest_rank
from .timeseries import ChangeSeries, sample_simple_digraph, trial_rng

logger = logging.getLogger(__name__)

TESTED = "tested"
SKIPPED = "skipped"
WEIGHT_LEVELS = (0.4, 0.7, 0.9)
WEIGHT_BIN_LABELS = ("0<w<=W0.4", "W0.4<w<=W0.7", "W0.7<w<=W0.9", "W0.9<w")

# relative pivot size below which a design column counts as collinear
_RANK_TOL = 1e-10


@dataclass(frozen=True)
class GrangerConfig:
    alpha: float = 0.05
    max_lag: int = 10
    lag_criterion: str = "bic"
    d_max: int = 1
    min_valid_points: int = 60
    min_variance: float = 1e-12

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.max_lag < 1:
            raise ValueError("max_lag must be >= 1")
        if not 0 <= self.d_max <= 2:
            raise ValueError("d_max must be 0, 1 or 2")
        if self.lag_criterion.lower() not in ("aic", "bic"):
            raise ValueError("lag_criterion must be AIC or BIC")
        object.__setattr__(self, "lag_criterion", self.lag_criterion.lower())

    def describe(self) -> str:
        return (f"alpha={self.alpha} max_lag={self.max_lag} criterion={self.lag_criterion.upper()} "
                f"d_max={self.d_max} min_valid_points={self.min_valid_points} "
                f"min_variance={self.min_variance} reference=chi2(asymptotic Wald)")


@dataclass
class GrangerOutcome:
    source: str
    target: str
    date: str
    status: str
    reason: str = ""
    p_value: float = math.nan
    wald_stat: float = math.nan
    lag_m: int = 0
    reject: bool | None = None
    nobs: int = 0

    @property
    def tested(self) -> bool:
        return self.status == TESTED


def _as_array(series) -> np.ndarray:
    if isinstance(series, ChangeSeries):
        return series.changes
    return np.asarray(series, dtype=np.float64)


def _lag_block(z: np.ndarray, lags: int, start: int) -> np.ndarray:
    """Columns z_{t-1}, ..., z_{t-lags} for rows t = start, ..., len(z) - 1."""
    win = sliding_window_view(z, lags)  # win[s] = z[s : s + lags]
    rows = win[start - lags: z.size - lags]
    return rows[:, ::-1]


def select_lag(x: np.ndarray, y: np.ndarray, max_lag: int, criterion: str = "aic") -> int | None:
    """Information-criterion lag order of the bivariate VAR of (y, x).

    Every order 1..max_lag is fitted on the rows t >= max_lag. Returns None
    when no order yields a full-rank design and a positive-definite residual
    covariance.
    """
    n = x.size
    T = n - max_lag
    cols = [np.ones(T)]
    ly = _lag_block(y, max_lag, max_lag)
    lx = _lag_block(x, max_lag, max_lag)
    for p in range(max_lag):
        cols.append(ly[:, p])
        cols.append(lx[:, p])
    Z = np.column_stack(cols)
    Y = np.column_stack([y[max_lag:], x[max_lag:]])
    q, r = np.linalg.qr(Z)
    diag = np.abs(np.diag(r))
    ok = diag > _RANK_TOL * max(diag.max(), 1e-300)
    qty = q.T @ Y
    yty = Y.T @ Y
    explained = np.cumsum(qty[:, :, None] * qty[:, None, :], axis=0)
    penalty_unit = (2.0 if criterion == "aic" else math.log(T)) * 4.0 / T
    best, best_ic = None, math.inf
    for p in range(1, max_lag + 1):
        k = 1 + 2 * p
        if not ok[:k].all():
            break
        s = (yty - explained[k - 1]) / T
        det = s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0]
        if not det > 0:
            continue
        ic = math.log(det) + penalty_unit * p
        if ic < best_ic:
            best, best_ic = p, ic
    return best


def wald_test(x: np.ndarray, y: np.ndarray, m: int, d_max: int) -> tuple[float, int] | None:
    """Wald statistic for the first ``m`` x-lags in the lag-augmented y equation.

    Returns (statistic, nobs) or None for a singular design.
    """
    L = m + d_max
    n = x.size
    T = n - L
    X = np.column_stack([np.ones(T), _lag_block(y, L, L), _lag_block(x, L, L)])
    K = X.shape[1]
    if T - K < 1:
        return None
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    if not (diag > _RANK_TOL * max(diag.max(), 1e-300)).all():
        return None
    target = y[L:]
    qty = q.T @ target
    beta = solve_triangular(r, qty)
    rss = float(target @ target - qty @ qty)
    sigma2 = rss / (T - K)
    if not sigma2 > 0:
        return None
    restricted = np.arange(1 + L, 1 + L + m)
    # (X'X)^-1 = R^-1 R^-T, so its restricted block is G G' with G = rows of R^-1
    r_inv = solve_triangular(r, np.eye(K))
    g = r_inv[restricted]
    v = sigma2 * (g @ g.T)
    b = beta[restricted]
    try:
        stat = float(b @ np.linalg.solve(v, b))
    except np.linalg.LinAlgError:
        return None
    return stat, T


def ty_granger(x, y, cfg: GrangerConfig = GrangerConfig(), source: str = "x",
               target: str = "y", day: str = "") -> GrangerOutcome:
    """Test H0: ``x`` does not Granger-cause ``y``."""
    xa, ya = _as_array(x), _as_array(y)
    if xa.shape != ya.shape:
        raise ValueError("series must share the same session grid")
    mask = np.isfinite(xa) & np.isfinite(ya)
    xa, ya = xa[mask], ya[mask]
    n = xa.size

    def skip(reason: str) -> GrangerOutcome:
        return GrangerOutcome(source, target, day, SKIPPED, reason, nobs=n)

    # both the lag search and the augmented regression need positive residual dof
    needed = max(cfg.min_valid_points, 3 * (cfg.max_lag + cfg.d_max) + 2)
    if n < needed:
        return skip("insufficient data")
    vx, vy = xa.var(), ya.var()
    if vx < cfg.min_variance or vy < cfg.min_variance:
        return skip("degenerate series")
    xs = (xa - xa.mean()) / math.sqrt(vx)
    ys = (ya - ya.mean()) / math.sqrt(vy)

    m = select_lag(xs, ys, cfg.max_lag, cfg.lag_criterion)
    if m is None:
        return skip("singular fit")
    res = wald_test(xs, ys, m, cfg.d_max)
    if res is None:
        return skip("singular fit")
    stat, nobs = res
    p = float(chdtrc(m, stat))
    p = min(max(p, 0.0), 1.0)
    return GrangerOutcome(source, target, day, TESTED, "", p, stat, m, p < cfg.alpha, nobs)


# ------------------------------------------------------------------ driver

_SHARED: dict = {}


def _init_worker(series: Mapping[str, np.ndarray], cfg: GrangerConfig, day: str) -> None:
    _SHARED["series"] = series
    _SHARED["cfg"] = cfg
    _SHARED["day"] = day


def _run_chunk(pairs: Sequence[tuple[str, str]]) -> list[GrangerOutcome]:
    series, cfg, day = _SHARED["series"], _SHARED["cfg"], _SHARED["day"]
    out = []
    for s, t in pairs:
        xs, ys = series.get(s), series.get(t)
        if xs is None or ys is None:
            out.append(GrangerOutcome(s, t, day, SKIPPED, "no data"))
        elif s == t:
            out.append(GrangerOutcome(s, t, day, SKIPPED, "self pair"))
        else:
            out.append(ty_granger(xs, ys, cfg, s, t, day))
    return out


@dataclass
class PairRun:
    outcomes: list[GrangerOutcome]

    @property
    def tested(self) -> int:
        return sum(o.tested for o in self.outcomes)

    @property
    def skipped(self) -> int:
        return len(self.outcomes) - self.tested

    @property
    def rejected(self) -> int:
        return sum(bool(o.reject) for o in self.outcomes if o.tested)

    def by_pair(self) -> dict[tuple[str, str], GrangerOutcome]:
        return {(o.source, o.target): o for o in self.outcomes}


def run_pairs(pairs: Iterable[tuple[str, str]], changes: Mapping[str, object],
              cfg: GrangerConfig = GrangerConfig(), workers: int = 1, day: str = "",
              chunk_size: int | None = None) -> PairRun:
    """Test every ordered pair; output order follows the (deduplicated) input.

    With ``workers > 1`` contiguous chunks go to forked worker processes;
    each test is a pure function of its two series, so results do not
    depend on the worker count.
    """
    unique = list(dict.fromkeys((str(s), str(t)) for s, t in pairs))
    series = {k: _as_array(v) for k, v in changes.items()}
    if not unique:
        return PairRun([])
    if workers <= 1 or len(unique) < 2:
        _init_worker(series, cfg, day)
        return PairRun(_run_chunk(unique))
    size = chunk_size or max(1, math.ceil(len(unique) / (workers * 8)))
    chunks = [unique[i:i + size] for i in range(0, len(unique), size)]
    ctx = mp.get_context("fork")
    with cf.ProcessPoolExecutor(max_workers=workers, mp_context=ctx,
                                initializer=_init_worker, initargs=(series, cfg, day)) as pool:
        results = list(pool.map(_run_chunk, chunks))
    return PairRun([o for chunk in results for o in chunk])


@dataclass
class AverageLevel:
    ratio: float
    std_error: float
    tested: int
    skipped: int
    sampled: int
    full: bool


def average_level(changes: Mapping[str, object], cfg: GrangerConfig = GrangerConfig(),
                  sample_size: int = 100_000, seed: int = 0, full: bool = False,
                  workers: int = 1, day: str = "") -> AverageLevel:
    """Rejection ratio over ordered stock pairs, sampled uniformly without replacement.

    ``full=True`` enumerates every ordered pair instead. The standard error
    is the binomial one, sqrt(r (1 - r) / tested).
    """
    stocks = sorted(changes)
    n = len(stocks)
    total = n * (n - 1)
    if full:
        pairs = [(a, b) for a in stocks for b in stocks if a != b]
    else:
        if sample_size < 1000:
            raise ValueError("sample_size must be at least 1000")
        k = min(sample_size, total)
        src, tgt = sample_simple_digraph(n, k, trial_rng(seed, 0))
        order = np.lexsort((tgt, src))
        pairs = [(stocks[s], stocks[t]) for s, t in zip(src[order], tgt[order])]
    run = run_pairs(pairs, changes, cfg, workers=workers, day=day)
    tested = run.tested
    ratio = run.rejected / tested if tested else math.nan
    se = math.sqrt(ratio * (1 - ratio) / tested) if tested else math.nan
    return AverageLevel(ratio, se, tested, run.skipped, len(pairs), full)


# ------------------------------------------------------------- aggregation


@dataclass(frozen=True)
class WeightPartition:
    thresholds: tuple[int, int, int]
    bins: np.ndarray

    def label(self, edge: int) -> str:
        return WEIGHT_BIN_LABELS[int(self.bins[edge])]


def weight_partition(net: StockNetwork) -> WeightPartition:
    if net.edge_count == 0:
        raise ValueError("network has no edges")
    ordered = np.sort(net.weight)
    w4, w7, w9 = (int(nearest_rank(ordered, q)) for q in WEIGHT_LEVELS)
    bins = np.select([net.weight <= w4, net.weight <= w7, net.weight <= w9], [0, 1, 2], default=3)
    return WeightPartition((w4, w7, w9), bins.astype(np.int64))


def _tally(outcomes: Iterable[GrangerOutcome | None]) -> tuple[int, int, int]:
    tested = rejected = skipped = 0
    for o in outcomes:
        if o is None or not o.tested:
            skipped += 1
        else:
            tested += 1
            rejected += bool(o.reject)
    return tested, rejected, skipped


def ratio_by_weight_bin(outcomes: Mapping[tuple[str, str], GrangerOutcome], net: StockNetwork,
                        partition: WeightPartition | None = None) -> pd.DataFrame:
    """Share of tested edges whose source Granger-causes its target, per weight bin.

    Skipped or missing outcomes are left out of the denominator.
    """
    partition = partition or weight_partition(net)
    pairs = net.edge_pairs()
    rows = []
    for b, label in enumerate(WEIGHT_BIN_LABELS):
        idx = np.flatnonzero(partition.bins == b)
        tested, rejected, skipped = _tally(outcomes.get(pairs[i]) for i in idx)
        rows.append((label, len(idx), tested, rejected, skipped,
                     rejected / tested if tested else math.nan))
    return pd.DataFrame(rows, columns=["bin", "edges", "tested", "rejected", "skipped", "ratio"])


def ratio_for_hubs(outcomes: Mapping[tuple[str, str], GrangerOutcome], net: StockNetwork,
                   top_n: int = 5) -> pd.DataFrame:
    out_deg = net.out_degree()
    rows = []
    for h in top_by_out_degree(net, top_n):
        hub = net.nodes[h]
        succ = net.successors(hub)
        tested, rejected, skipped = _tally(outcomes.get((hub, s)) for s in succ)
        rows.append((hub, int(out_deg[h]), tested, rejected, skipped,
                     rejected / tested if tested else math.nan))
    return pd.DataFrame(rows, columns=["hub", "out_degree", "tested", "rejected", "skipped", "ratio"])


def rich_club_granger(outcomes: Mapping[tuple[str, str], GrangerOutcome], net: StockNetwork,
                      r_values: Iterable[int],
                      points: Sequence[RichClubPoint] | None = None) -> list[RichClubPoint]:
    """Fill ``granger_density`` = (intra-club edges that reject) / (r (r - 1))."""
    points = list(points) if points is not None else rich_club_curve(net, r_values)
    for pt in points:
        if pt.r < 2:
            pt.granger_density = math.nan
            continue
        inside = np.zeros(net.node_count, dtype=bool)
        inside[top_by_out_degree(net, pt.r)] = True
        sel = np.flatnonzero(inside[net.source] & inside[net.target])
        passed = 0
        for i in sel:
            o = outcomes.get((net.nodes[net.source[i]], net.nodes[net.target[i]]))
            passed += bool(o is not None and o.tested and o.reject)
        pt.granger_density = passed / (pt.r * (pt.r - 1))
    return points


OUTCOME_COLUMNS = ("source", "target", "date", "status", "reason", "lag", "wald", "p", "reject")


def write_outcomes(outcomes: Iterable[GrangerOutcome], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OUTCOME_COLUMNS)
        for o in outcomes:
            w.writerow([o.source, o.target, o.date, o.status, o.reason,
                        o.lag_m if o.tested else "",
                        repr(o.wald_stat) if o.tested else "",
                        repr(o.p_value) if o.tested else "",
                        ("1" if o.reject else "0") if o.tested else ""])


def read_outcomes(path: str | Path) -> list[GrangerOutcome]:
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            tested = row["status"] == TESTED
            out.append(GrangerOutcome(
                row["source"], row["target"], row["date"], row["status"], row["reason"],
                float(row["p"]) if tested else math.nan,
                float(row["wald"]) if tested else math.nan,
                int(row["lag"]) if tested else 0,
                row["reject"] == "1" if tested else None,
            ))
    return out


def outcome_dict(o: GrangerOutcome) -> dict:
    return asdict(o)
