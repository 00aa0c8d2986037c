"""Investor-stock bipartite graph, its directed stock projection, and edge filtering."""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field, replace
from datetime import date
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .ingest import AggregatedHolding

FORMAT_TAG = "stocknet network v1"


class ChecksumError(ValueError):
    """A persisted network does not match its recorded checksum."""


def nearest_rank(sorted_values: Sequence | np.ndarray, q: float):
    """Nearest-rank ``q``-quantile of an ascending sequence.

    Returns the element at 1-based rank ``ceil(q * n)`` (at least rank 1).
    ``q`` is read through its decimal representation so that e.g. 0.95 of 100
    is exactly rank 95.
    """
    n = len(sorted_values)
    if n == 0:
        raise ValueError("quantile of an empty sequence")
    if not 0 <= q <= 1:
        raise ValueError(f"quantile level {q} outside [0, 1]")
    rank = math.ceil(Fraction(repr(float(q))) * n)
    return sorted_values[max(rank, 1) - 1]


@dataclass(frozen=True)
class BipartiteGraph:
    """Managers (rows) by stocks (columns); entries are held value in cents."""

    investors: tuple[str, ...]
    stocks: tuple[str, ...]
    matrix: sparse.csr_matrix
    as_of_date: date | None = None

    @property
    def edge_count(self) -> int:
        return int(self.matrix.nnz)

    @property
    def edges(self) -> dict[tuple[str, str], int]:
        coo = self.matrix.tocoo()
        return {(self.investors[m], self.stocks[i]): int(v)
                for m, i, v in zip(coo.row, coo.col, coo.data)}

    def holdings_of(self, investor: str) -> dict[str, int]:
        m = self.investors.index(investor)
        row = self.matrix.getrow(m)
        return {self.stocks[i]: int(v) for i, v in zip(row.indices, row.data)}

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for k in order:
            h.update(f"{self.investors[coo.row[k]]}\t{self.stocks[coo.col[k]]}\t{coo.data[k]}\n".encode())
        return h.hexdigest()


def build_bipartite(holdings: Iterable[AggregatedHolding]) -> BipartiteGraph:
    holdings = list(holdings)
    if not holdings:
        raise ValueError("no holdings to build a bipartite graph from")
    dates = {h.as_of_date for h in holdings}
    if len(dates) > 1:
        raise ValueError(f"holdings span several snapshot dates: {sorted(dates)}")
    investors = tuple(sorted({h.manager_id for h in holdings}))
    stocks = tuple(sorted({h.stock_id for h in holdings}))
    inv_ix = {m: k for k, m in enumerate(investors)}
    stk_ix = {s: k for k, s in enumerate(stocks)}
    rows = np.fromiter((inv_ix[h.manager_id] for h in holdings), dtype=np.int64, count=len(holdings))
    cols = np.fromiter((stk_ix[h.stock_id] for h in holdings), dtype=np.int64, count=len(holdings))
    vals = np.fromiter((h.value_cents for h in holdings), dtype=np.int64, count=len(holdings))
    if (vals <= 0).any():
        raise ValueError("bipartite edge weights must be positive")
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(len(investors), len(stocks)), dtype=np.int64)
    if mat.nnz != len(holdings):
        raise ValueError("duplicate (manager, stock) pairs; aggregate holdings first")
    mat.sort_indices()
    return BipartiteGraph(investors, stocks, mat, dates.pop())


@dataclass(frozen=True, eq=False)
class StockNetwork:
    """Directed weighted stock graph.

    Edges are stored as parallel arrays sorted by (source, target) index;
    node ids are sorted, so index order is also lexicographic id order.
    Weights are integer cents.
    """

    nodes: tuple[str, ...]
    source: np.ndarray
    target: np.ndarray
    weight: np.ndarray
    k: float | None = None
    build_date: str = ""
    source_hash: str = ""
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._index is None:
            object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.nodes)})

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        return int(self.source.size)

    def index(self, node: str) -> int:
        return self._index[node]

    def out_degree(self) -> np.ndarray:
        return np.bincount(self.source, minlength=self.node_count)

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.target, minlength=self.node_count)

    def out_strength(self) -> np.ndarray:
        return np.bincount(self.source, weights=self.weight, minlength=self.node_count)

    def in_strength(self) -> np.ndarray:
        return np.bincount(self.target, weights=self.weight, minlength=self.node_count)

    def adjacency(self) -> sparse.csr_matrix:
        n = self.node_count
        return sparse.csr_matrix((np.ones(self.edge_count, dtype=np.int8), (self.source, self.target)),
                                 shape=(n, n))

    def successors(self, node: str) -> list[str]:
        i = self.index(node)
        lo, hi = np.searchsorted(self.source, [i, i + 1])
        return [self.nodes[j] for j in self.target[lo:hi]]

    def edge_weights(self) -> dict[tuple[str, str], int]:
        return {(self.nodes[s], self.nodes[t]): int(w)
                for s, t, w in zip(self.source, self.target, self.weight)}

    def edge_pairs(self) -> list[tuple[str, str]]:
        return [(self.nodes[s], self.nodes[t]) for s, t in zip(self.source, self.target)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, StockNetwork):
            return NotImplemented
        return (self.nodes == other.nodes
                and np.array_equal(self.source, other.source)
                and np.array_equal(self.target, other.target)
                and np.array_equal(self.weight, other.weight)
                and self.k == other.k
                and self.build_date == other.build_date
                and self.source_hash == other.source_hash)

    __hash__ = None


def network_from_edges(nodes: Iterable[str], edges: dict[tuple[str, str], int], **meta) -> StockNetwork:
    """Build a :class:`StockNetwork` from an explicit edge map (ids → cents)."""
    nodes = tuple(sorted(set(nodes) | {n for e in edges for n in e}))
    ix = {n: i for i, n in enumerate(nodes)}
    items = sorted(((ix[s], ix[t], int(w)) for (s, t), w in edges.items()))
    for s, t, w in items:
        if s == t:
            raise ValueError("self-loops are not allowed")
        if w < 0:
            raise ValueError("negative edge weight")
    arr = np.array(items, dtype=np.int64).reshape(-1, 3)
    return StockNetwork(nodes, arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), **meta)


def project(b: BipartiteGraph) -> StockNetwork:
    """Project the bipartite graph onto a directed stock network.

    ``w[i, j]`` sums the value of stock ``i`` held by every manager that
    also holds ``j``. Summing ``H.T @ (H > 0)`` over managers is exactly the
    per-manager accumulation of its ``s * (s - 1)`` ordered holding pairs;
    the diagonal is dropped afterwards.
    """
    h = b.matrix.astype(np.int64)
    held = (h > 0).astype(np.int64)
    w = (h.T @ held).tocoo()
    off = w.row != w.col
    src, tgt, wt = w.row[off].astype(np.int64), w.col[off].astype(np.int64), w.data[off].astype(np.int64)
    order = np.lexsort((tgt, src))
    return StockNetwork(b.stocks, src[order], tgt[order], wt[order], k=None,
                        build_date=b.as_of_date.isoformat() if b.as_of_date else "",
                        source_hash=b.fingerprint()[:16])


def weight_threshold(net: StockNetwork, k: float) -> int:
    """The ``100 * k``-th nearest-rank percentile of the edge weights."""
    if net.edge_count == 0:
        raise ValueError("network has no edges")
    return int(nearest_rank(np.sort(net.weight), k))


def filter_edges(net: StockNetwork, k: float) -> StockNetwork:
    """Drop edges weighing strictly less than the ``100 * k``-th percentile.

    Ties at the threshold survive and every node is kept, isolated or not.
    """
    if not 0 <= k < 1:
        raise ValueError(f"filter parameter k={k} outside [0, 1)")
    threshold = weight_threshold(net, k)
    keep = net.weight >= threshold
    return replace(net, source=net.source[keep], target=net.target[keep],
                   weight=net.weight[keep], k=float(k), _index=net._index)


@dataclass(frozen=True)
class FilterSweepPoint:
    k: float
    weight_quantile: int
    ws_ratio: float
    lwcc_size: int
    edge_count: int


def largest_wcc(net: StockNetwork) -> int:
    if net.node_count == 0:
        return 0
    _, labels = connected_components(net.adjacency(), directed=True, connection="weak")
    return int(np.bincount(labels).max())


def filter_sweep(net: StockNetwork, ks: Sequence[float]) -> list[FilterSweepPoint]:
    """Evaluate independent filters of ``net`` at every ``k`` in ``ks``."""
    if list(ks) != sorted(ks):
        raise ValueError("ks must be sorted ascending")
    total = float(net.weight.sum())
    points = []
    for k in ks:
        f = filter_edges(net, k)
        points.append(FilterSweepPoint(
            k=float(k),
            weight_quantile=weight_threshold(net, k),
            ws_ratio=float(f.weight.sum()) / total if total else float("nan"),
            lwcc_size=largest_wcc(f),
            edge_count=f.edge_count,
        ))
    return points


# ------------------------------------------------------------ persistence


def _body(net: StockNetwork) -> str:
    rows = [(net.nodes[s], net.nodes[t], str(int(w)))
            for s, t, w in zip(net.source, net.target, net.weight)]
    touched = np.zeros(net.node_count, dtype=bool)
    touched[net.source] = True
    touched[net.target] = True
    rows += [(net.nodes[i], "", "") for i in np.flatnonzero(~touched)]
    rows.sort()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("source", "target", "weight_cents"))
    writer.writerows(rows)
    return buf.getvalue()


def _header(net: StockNetwork) -> list[str]:
    return [
        f"# {FORMAT_TAG}",
        f"# node_count: {net.node_count}",
        f"# edge_count: {net.edge_count}",
        f"# k: {'none' if net.k is None else repr(float(net.k))}",
        f"# build_date: {net.build_date}",
        f"# source_hash: {net.source_hash}",
    ]


def _digest(header: list[str], body: str) -> str:
    return hashlib.sha256(("\n".join(header) + "\n" + body).encode("utf-8")).hexdigest()


def dumps_network(net: StockNetwork) -> str:
    header = _header(net)
    body = _body(net)
    return "\n".join(header) + f"\n# checksum: sha256:{_digest(header, body)}\n" + body


def save_network(net: StockNetwork, path: str | Path) -> None:
    Path(path).write_bytes(dumps_network(net).encode("utf-8"))


def load_network(path: str | Path) -> StockNetwork:
    """Read a network artifact, verifying its checksum and counts."""
    text = Path(path).read_bytes().decode("utf-8")
    lines = text.split("\n")
    header, checksum, i = [], None, 0
    while i < len(lines) and lines[i].startswith("#"):
        if lines[i].startswith("# checksum:"):
            checksum = lines[i].split("sha256:", 1)[1].strip()
        else:
            header.append(lines[i])
        i += 1
    body = "\n".join(lines[i:])
    if checksum is None:
        raise ChecksumError(f"{path}: no checksum line")
    if header[:1] != [f"# {FORMAT_TAG}"]:
        raise ValueError(f"{path}: not a {FORMAT_TAG} file")
    if _digest(header, body) != checksum:
        raise ChecksumError(f"{path}: checksum mismatch")

    meta = dict(line[2:].split(": ", 1) if ": " in line[2:] else (line[2:].rstrip(":"), "")
                for line in header[1:])
    reader = csv.reader(io.StringIO(body))
    next(reader)
    nodes: set[str] = set()
    edges: dict[tuple[str, str], int] = {}
    for row in reader:
        if not row:
            continue
        s, t, w = row
        nodes.add(s)
        if t:
            nodes.add(t)
            edges[(s, t)] = int(w)
    k = None if meta.get("k", "none") == "none" else float(meta["k"])
    net = network_from_edges(nodes, edges, k=k, build_date=meta.get("build_date", ""),
                             source_hash=meta.get("source_hash", ""))
    if net.node_count != int(meta["node_count"]) or net.edge_count != int(meta["edge_count"]):
        raise ValueError(f"{path}: header counts disagree with body")
    return net
