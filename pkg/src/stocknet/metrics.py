"""Topology diagnostics of a stock network and out-degree group reports."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.sparse.csgraph import connected_components

from .ingest import StockLabel
from .network import StockNetwork, nearest_rank

logger = logging.getLogger(__name__)

GROUP_LABELS = ("d=0", "0<d<=D0.3", "D0.3<d<=D0.6", "D0.6<d<=D0.9", "D0.9<d")
PARTITION_LEVELS = (0.3, 0.6, 0.9)


@dataclass
class NetworkStats:
    density: float
    node_count: int
    edge_count: int
    avg_degree: float
    in_assort: float
    out_assort: float
    weight_mean: float
    weight_std: float
    weight_sum: float
    n_scc: int
    n_wcc: int
    max_scc_size: int
    max_wcc_size: int
    notes: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = x.astype(np.float64)
    y = y.astype(np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 or syy == 0:
        return float("nan")
    return float(dx @ dy) / math.sqrt(sxx * syy)


def assortativity(net: StockNetwork, mode: str = "out") -> float:
    """Pearson correlation of (source degree, target degree) over all edges.

    ``mode`` picks which degree is used at both ends. Returns NaN when the
    coefficient is undefined (fewer than two edges or a constant endpoint
    sequence); :func:`assortativity_reason` explains why.
    """
    deg = _degree(net, mode)
    if net.edge_count < 2:
        return float("nan")
    return _pearson(deg[net.source], deg[net.target])


def assortativity_reason(net: StockNetwork, mode: str = "out") -> str | None:
    if net.edge_count < 2:
        return "fewer than two edges"
    deg = _degree(net, mode)
    if np.ptp(deg[net.source]) == 0 or np.ptp(deg[net.target]) == 0:
        return f"zero variance of {mode}-degree at an edge endpoint"
    return None


def _degree(net: StockNetwork, mode: str) -> np.ndarray:
    if mode == "out":
        return net.out_degree()
    if mode == "in":
        return net.in_degree()
    raise ValueError(f"mode must be 'in' or 'out', not {mode!r}")


def compute_stats(net: StockNetwork) -> NetworkStats:
    """Table-style summary; weights are reported in currency units, std is population."""
    n, m = net.node_count, net.edge_count
    if n == 0:
        raise ValueError("empty network")
    adj = net.adjacency()
    n_scc, scc = connected_components(adj, directed=True, connection="strong")
    n_wcc, wcc = connected_components(adj, directed=True, connection="weak")
    w = net.weight.astype(np.float64) / 100.0
    notes = {}
    for mode in ("in", "out"):
        reason = assortativity_reason(net, mode)
        if reason:
            notes[f"{mode}_assort"] = reason
    notes["avg_degree"] = "edges per node (average out-degree)"
    notes["assortativity"] = "Pearson over edges of (source, target) degree of the same mode"
    return NetworkStats(
        density=m / (n * (n - 1)) if n > 1 else float("nan"),
        node_count=n,
        edge_count=m,
        avg_degree=m / n,
        in_assort=assortativity(net, "in"),
        out_assort=assortativity(net, "out"),
        weight_mean=float(w.mean()) if m else float("nan"),
        weight_std=float(w.std()) if m else float("nan"),
        weight_sum=float(net.weight.sum()) / 100.0,
        n_scc=int(n_scc),
        n_wcc=int(n_wcc),
        max_scc_size=int(np.bincount(scc).max()),
        max_wcc_size=int(np.bincount(wcc).max()),
        notes=notes,
    )


@dataclass(frozen=True)
class DegreePartition:
    """Five out-degree groups; ``groups[i]`` indexes :data:`GROUP_LABELS`."""

    nodes: tuple[str, ...]
    thresholds: tuple[int, int, int]
    groups: np.ndarray

    def group_of(self, node: str) -> str:
        return GROUP_LABELS[int(self.groups[self.nodes.index(node)])]

    def members(self, label: str) -> list[str]:
        g = GROUP_LABELS.index(label)
        return [self.nodes[i] for i in np.flatnonzero(self.groups == g)]

    def sizes(self) -> dict[str, int]:
        counts = np.bincount(self.groups, minlength=len(GROUP_LABELS))
        return dict(zip(GROUP_LABELS, counts.tolist()))

    def mapping(self) -> dict[str, int]:
        return dict(zip(self.nodes, self.groups.tolist()))


def assign_groups(out_degree: np.ndarray, thresholds: Sequence[int]) -> np.ndarray:
    d30, d60, d90 = thresholds
    groups = np.zeros(out_degree.shape, dtype=np.int64)
    groups[(out_degree > 0) & (out_degree <= d30)] = 1
    groups[(out_degree > d30) & (out_degree <= d60)] = 2
    groups[(out_degree > d60) & (out_degree <= d90)] = 3
    groups[out_degree > d90] = 4
    return groups


def degree_partition(net: StockNetwork) -> DegreePartition:
    out = net.out_degree()
    positive = np.sort(out[out > 0])
    if positive.size == 0:
        raise ValueError("every node has zero out-degree; partition undefined")
    thresholds = tuple(int(nearest_rank(positive, q)) for q in PARTITION_LEVELS)
    return DegreePartition(net.nodes, thresholds, assign_groups(out, thresholds))


def group_feature_shares(net: StockNetwork, partition: DegreePartition,
                         market_values: Mapping[str, float]) -> pd.DataFrame:
    """Per-group shares of out-degree, out-strength, market value and node count.

    Nodes without a market value are excluded from every column.
    """
    have = np.array([market_values.get(n) is not None for n in net.nodes])
    if (~have).any():
        logger.warning("%d nodes lack a market value and are excluded from group shares",
                       int((~have).sum()))
    mv = np.array([market_values.get(n) or 0.0 for n in net.nodes], dtype=np.float64)
    groups = partition.groups[have]
    cols = {
        "out_degree": net.out_degree()[have].astype(np.float64),
        "out_strength": net.out_strength()[have],
        "market_value": mv[have],
        "sample_ratio": np.ones(int(have.sum())),
    }
    table = {}
    for name, values in cols.items():
        sums = np.bincount(groups, weights=values, minlength=len(GROUP_LABELS))
        total = sums.sum()
        table[name] = sums / total if total else np.full(len(GROUP_LABELS), np.nan)
    df = pd.DataFrame(table, index=pd.Index(GROUP_LABELS, name="group"))
    df.loc["total"] = df.sum()
    return df


def composition_report(partition: DegreePartition, labels: Iterable[StockLabel],
                       axis: str = "sector") -> pd.DataFrame:
    """Counts of nodes per (category, group), with row and column proportions.

    Long format; the pseudo-category ``"sample size"`` holds group sizes of
    labelled nodes and pseudo-group ``"total"`` holds row totals. Nodes
    without a label are counted under category ``"(unlabeled)"`` and kept out
    of the proportions.
    """
    if axis not in ("sector", "style"):
        raise ValueError("axis must be 'sector' or 'style'")
    cat = {lab.stock_id: getattr(lab, axis) for lab in labels}
    node_groups = partition.mapping()
    counts: dict[tuple[str, str], int] = {}
    unlabeled = np.zeros(len(GROUP_LABELS), dtype=np.int64)
    for node, g in node_groups.items():
        c = cat.get(node)
        if c is None:
            unlabeled[g] += 1
            continue
        key = (c, GROUP_LABELS[g])
        counts[key] = counts.get(key, 0) + 1
    categories = sorted({c for c, _ in counts})
    matrix = np.array([[counts.get((c, g), 0) for g in GROUP_LABELS] for c in categories],
                      dtype=np.int64).reshape(len(categories), len(GROUP_LABELS))
    col_tot = matrix.sum(axis=0)
    grand = int(matrix.sum())
    rows = []
    for ci, c in enumerate(categories):
        row_tot = int(matrix[ci].sum())
        for gi, g in enumerate(GROUP_LABELS):
            cnt = int(matrix[ci, gi])
            rows.append((c, g, cnt, cnt / row_tot if row_tot else np.nan,
                         cnt / col_tot[gi] if col_tot[gi] else np.nan))
        rows.append((c, "total", row_tot, 1.0, row_tot / grand if grand else np.nan))
    for gi, g in enumerate(GROUP_LABELS):
        rows.append(("sample size", g, int(col_tot[gi]), col_tot[gi] / grand if grand else np.nan, 1.0))
    rows.append(("sample size", "total", grand, 1.0 if grand else np.nan, 1.0))
    for gi, g in enumerate(GROUP_LABELS):
        rows.append(("(unlabeled)", g, int(unlabeled[gi]), np.nan, np.nan))
    return pd.DataFrame(rows, columns=["category", "group", "count", "row_share", "col_share"])


def top_by_out_degree(net: StockNetwork, r: int) -> np.ndarray:
    """Indices of the ``r`` highest out-degree nodes (ties: node id ascending)."""
    out = net.out_degree()
    order = np.argsort(-out, kind="stable")
    return order[:r]


@dataclass
class RichClubPoint:
    r: int
    e: int
    density_rr: float
    granger_density: float | None = None


def rich_club_curve(net: StockNetwork, r_values: Iterable[int]) -> list[RichClubPoint]:
    points = []
    for r in r_values:
        if r > net.node_count:
            raise ValueError(f"r={r} exceeds node count {net.node_count}")
        inside = np.zeros(net.node_count, dtype=bool)
        inside[top_by_out_degree(net, r)] = True
        e = int((inside[net.source] & inside[net.target]).sum())
        density = e / (r * (r - 1)) if r > 1 else float("nan")
        points.append(RichClubPoint(int(r), e, density))
    return points


def degree_strength_scatter(net: StockNetwork, mode: str = "out") -> pd.DataFrame:
    """One row per node: degree, strength (currency units) and the other-mode degree.

    Zero out-degree nodes are left out of the ``out`` table.
    """
    if mode == "out":
        deg, strength, other = net.out_degree(), net.out_strength(), net.in_degree()
    elif mode == "in":
        deg, strength, other = net.in_degree(), net.in_strength(), net.out_degree()
    else:
        raise ValueError(f"mode must be 'in' or 'out', not {mode!r}")
    df = pd.DataFrame({
        "stock_id": list(net.nodes),
        "degree": deg,
        "strength": strength / 100.0,
        "other_degree": other,
    })
    if mode == "out":
        df = df[df["degree"] > 0].reset_index(drop=True)
    return df


def degree_cdf(net: StockNetwork) -> pd.DataFrame:
    """Empirical CDF of in- and out-degree (long format: mode, degree, cdf)."""
    frames = []
    for mode in ("in", "out"):
        deg = np.sort(_degree(net, mode))
        values, counts = np.unique(deg, return_counts=True)
        frames.append(pd.DataFrame({"mode": mode, "degree": values,
                                    "cdf": np.cumsum(counts) / deg.size}))
    return pd.concat(frames, ignore_index=True)
