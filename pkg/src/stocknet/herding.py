"""Institutional herding: holding-pattern matrices over out-degree groups,
paired one-tailed t tests, portfolio entropy and crash-day absolute loss."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .metrics import GROUP_LABELS, DegreePartition
from .network import BipartiteGraph

logger = logging.getLogger(__name__)


@dataclass
class HerdingMatrix:
    """Institution x group matrices.

    ``counts[m, g]`` is the fraction of group ``g``'s stocks held by ``m``;
    ``values[m, g]`` the mean held value (currency units) per held stock in
    ``g``, 0 when none is held. Columns of empty groups are NaN.
    """

    institutions: tuple[str, ...]
    groups: tuple[str, ...]
    counts: np.ndarray
    values: np.ndarray
    group_sizes: np.ndarray
    held: np.ndarray

    def column(self, metric: str, group: str) -> np.ndarray:
        g = self.groups.index(group)
        return (self.counts if metric == "count" else self.values)[:, g]

    def ordering(self) -> list[int]:
        """Rows sorted by mean value in the top group ascending, ties by name."""
        top = np.nan_to_num(self.values[:, -1], nan=-np.inf)
        return sorted(range(len(self.institutions)), key=lambda i: (top[i], self.institutions[i]))

    def to_long(self) -> pd.DataFrame:
        rows = []
        for rank, i in enumerate(self.ordering()):
            for g, label in enumerate(self.groups):
                rows.append((self.institutions[i], rank, label, "count_share", self.counts[i, g]))
                rows.append((self.institutions[i], rank, label, "value_per_stock", self.values[i, g]))
        return pd.DataFrame(rows, columns=["institution", "row", "group", "metric", "value"])


def herding_matrices(bipartite: BipartiteGraph, partition: DegreePartition) -> HerdingMatrix:
    group_of = partition.mapping()
    col_group = np.array([group_of.get(s, -1) for s in bipartite.stocks])
    missing = int((col_group < 0).sum())
    if missing:
        logger.warning("%d held stocks are not in the partition and are ignored", missing)
    n_groups = len(GROUP_LABELS)
    sizes = np.bincount(partition.groups, minlength=n_groups).astype(np.float64)

    coo = bipartite.matrix.tocoo()
    g = col_group[coo.col]
    ok = g >= 0
    n_inv = len(bipartite.investors)
    held = np.zeros((n_inv, n_groups))
    value = np.zeros((n_inv, n_groups))
    np.add.at(held, (coo.row[ok], g[ok]), 1)
    np.add.at(value, (coo.row[ok], g[ok]), coo.data[ok] / 100.0)

    with np.errstate(divide="ignore", invalid="ignore"):
        counts = held / sizes
        values = np.where(held > 0, value / np.where(held > 0, held, 1), 0.0)
    empty = sizes == 0
    counts[:, empty] = np.nan
    values[:, empty] = np.nan
    return HerdingMatrix(bipartite.investors, GROUP_LABELS, counts, values,
                         sizes.astype(np.int64), held.astype(np.int64))


@dataclass
class PairedTestResult:
    group_low: str
    group_high: str
    t_stat: float
    p_value: float
    n_pairs: int
    note: str = ""


def paired_one_tailed_t(low: Sequence[float], high: Sequence[float],
                        group_low: str = "low", group_high: str = "high") -> PairedTestResult:
    """Paired t test of H1: mean(low - high) < 0, with n - 1 degrees of freedom."""
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    if low.shape != high.shape or low.ndim != 1:
        raise ValueError("paired samples must be 1-d and of equal length")
    n = low.size
    if n < 2:
        return PairedTestResult(group_low, group_high, math.nan, math.nan, n, "fewer than two pairs")
    diff = low - high
    sd = diff.std(ddof=1)
    if not np.isfinite(sd) or sd == 0:
        return PairedTestResult(group_low, group_high, math.nan, math.nan, n,
                                "zero variance of paired differences")
    t = diff.mean() / (sd / math.sqrt(n))
    return PairedTestResult(group_low, group_high, float(t), float(stats.t.cdf(t, n - 1)), n)


def adjacent_group_tests(matrix: HerdingMatrix) -> pd.DataFrame:
    """Table of one-tailed tests between each pair of adjacent groups, both metrics."""
    rows = []
    for lo, hi in zip(matrix.groups[:-1], matrix.groups[1:]):
        row = {"group_low": lo, "group_high": hi}
        for metric in ("count", "value"):
            res = paired_one_tailed_t(matrix.column(metric, lo), matrix.column(metric, hi), lo, hi)
            row[f"t_{metric}"] = res.t_stat
            row[f"p_{metric}"] = res.p_value
            row[f"note_{metric}"] = res.note
            row["n_pairs"] = res.n_pairs
        rows.append(row)
    return pd.DataFrame(rows)


def portfolio_entropy(bipartite: BipartiteGraph, institution: str) -> float:
    """Shannon entropy (nats) of an institution's holding-value distribution."""
    values = np.array(list(bipartite.holdings_of(institution).values()), dtype=np.float64)
    total = values.sum()
    if total <= 0:
        raise ValueError(f"{institution} holds nothing; entropy undefined")
    p = values[values > 0] / total
    return float(-(p * np.log(p)).sum())


def absolute_loss(bipartite: BipartiteGraph, institution: str,
                  daily_net_changes: Mapping[str, float]) -> float:
    """``|sum_i h_i d_i|`` in currency units; holdings without a change are skipped."""
    total = 0.0
    for stock, cents in bipartite.holdings_of(institution).items():
        d = daily_net_changes.get(stock)
        if d is None or not np.isfinite(d):
            logger.info("%s: no net change for %s, excluded from loss", institution, stock)
            continue
        total += cents / 100.0 * d
    return abs(total)


def entropy_loss_table(bipartite: BipartiteGraph,
                       daily_net_changes: Mapping[str, float] | None) -> pd.DataFrame:
    rows = []
    for inst in bipartite.investors:
        loss = absolute_loss(bipartite, inst, daily_net_changes) if daily_net_changes else np.nan
        rows.append((inst, portfolio_entropy(bipartite, inst), loss,
                     len(bipartite.holdings_of(inst))))
    return pd.DataFrame(rows, columns=["institution", "entropy", "absolute_loss", "n_stocks"])


def top_group_investors(matrix: HerdingMatrix, n: int = 5) -> pd.DataFrame:
    """Institutions with the largest mean value per stock in the top out-degree group."""
    top = len(matrix.groups) - 1
    order = sorted(range(len(matrix.institutions)),
                   key=lambda i: (-np.nan_to_num(matrix.values[i, top], nan=-np.inf),
                                  matrix.institutions[i]))[:n]
    rows = [(matrix.institutions[i], matrix.values[i, top], int(matrix.held[i, top]),
             matrix.counts[i, top], int(matrix.held[i].sum())) for i in order]
    return pd.DataFrame(rows, columns=["institution", "value_per_stock_top", "held_top",
                                       "share_of_top_group", "held_total"])
