import math

import networkx as nx
import numpy as np
import pytest

from stocknet.ingest import StockLabel
from stocknet.metrics import (GROUP_LABELS, DegreePartition, assign_groups, assortativity,
                              assortativity_reason, composition_report, compute_stats, degree_cdf,
                              degree_partition, degree_strength_scatter, group_feature_shares,
                              rich_club_curve, top_by_out_degree)
from stocknet.network import network_from_edges

from oracles import components, dense_adjacency, pearson


def random_net(rng, n, p):
    nodes = [f"s{i:03d}" for i in range(n)]
    mask = rng.random((n, n)) < p
    np.fill_diagonal(mask, False)
    edges = {(nodes[i], nodes[j]): int(rng.integers(1, 10**6)) for i, j in zip(*np.nonzero(mask))}
    return network_from_edges(nodes, edges)


def to_nx(net):
    g = nx.DiGraph()
    g.add_nodes_from(range(net.node_count))
    g.add_weighted_edges_from(zip(net.source.tolist(), net.target.tolist(), net.weight.tolist()))
    return g


def test_directed_cycle():
    s = compute_stats(network_from_edges("abc", {("a", "b"): 1, ("b", "c"): 1, ("c", "a"): 1}))
    assert s.density == 0.5
    assert s.n_scc == 1 and s.max_scc_size == 3
    assert s.n_wcc == 1 and s.avg_degree == 1.0


@pytest.mark.parametrize("seed", range(10))
def test_stats_match_networkx(seed):
    net = random_net(np.random.default_rng(seed), 50, 0.06)
    g = to_nx(net)
    s = compute_stats(net)
    assert s.density == pytest.approx(nx.density(g), abs=1e-12)
    assert s.n_scc == nx.number_strongly_connected_components(g)
    assert s.n_wcc == nx.number_weakly_connected_components(g)
    assert s.max_scc_size == max(len(c) for c in nx.strongly_connected_components(g))
    assert s.max_wcc_size == max(len(c) for c in nx.weakly_connected_components(g))
    for mode in ("in", "out"):
        ref = nx.degree_pearson_correlation_coefficient(g, x=mode, y=mode)
        assert getattr(s, f"{mode}_assort") == pytest.approx(ref, abs=1e-9)
    w = net.weight / 100.0
    assert s.weight_mean == pytest.approx(w.mean(), rel=1e-12)
    assert s.weight_std == pytest.approx(np.sqrt(((w - w.mean()) ** 2).mean()), rel=1e-12)


def test_star_out_assortativity_undefined():
    net = network_from_edges("habc", {("h", "a"): 1, ("h", "b"): 1, ("h", "c"): 1})
    assert math.isnan(assortativity(net, "out"))
    assert "zero variance" in assortativity_reason(net, "out")
    assert "out_assort" in compute_stats(net).notes


def test_assortativity_three_edge_example():
    # in-degree pairs over (a,b), (c,d), (b,d): (0,1), (0,2), (1,2); Pearson = 0.5 by hand
    net = network_from_edges("abcd", {("a", "b"): 1, ("c", "d"): 1, ("b", "d"): 1})
    assert assortativity(net, "in") == pytest.approx(0.5, abs=1e-15)
    assert assortativity(net, "in") == pytest.approx(pearson([0, 0, 1], [1, 2, 2]), abs=1e-15)
    # every source has out-degree 1
    assert math.isnan(assortativity(net, "out"))


def test_assortativity_needs_two_edges():
    net = network_from_edges("ab", {("a", "b"): 1})
    assert math.isnan(assortativity(net, "in"))
    assert assortativity_reason(net, "in") == "fewer than two edges"


def test_components_match_bruteforce(rng):
    for _ in range(5):
        net = random_net(rng, 30, 0.04)
        a = dense_adjacency(net.node_count, zip(net.source, net.target))
        s = compute_stats(net)
        assert s.n_scc == len(components(a, True))
        assert s.max_wcc_size == max(components(a, False))


def test_partition_thresholds_on_tens():
    nodes = [f"n{i:02d}" for i in range(11)]
    edges = {}
    # n00..n09 get out-degree 10, 20, ..., 100 towards a pool of sink nodes
    sinks = [f"z{j:03d}" for j in range(100)]
    for i in range(10):
        for j in range(10 * (i + 1)):
            edges[(nodes[i], sinks[j])] = 1
    part = degree_partition(network_from_edges(nodes + sinks, edges))
    assert part.thresholds == (30, 60, 90)
    assert part.group_of("n00") == "0<d<=D0.3"
    assert part.group_of("n02") == "0<d<=D0.3"
    assert part.group_of("n03") == "D0.3<d<=D0.6"
    assert part.group_of("n08") == "D0.6<d<=D0.9"
    assert part.group_of("n09") == "D0.9<d"
    assert part.group_of("n10") == "d=0"
    assert part.sizes()["d=0"] == 101


def test_partition_requires_positive_out_degree():
    with pytest.raises(ValueError):
        degree_partition(network_from_edges("ab", {}))


def test_assign_groups_boundaries():
    out = np.array([0, 1, 3, 4, 6, 7, 9, 10])
    assert assign_groups(out, (3, 6, 9)).tolist() == [0, 1, 1, 2, 2, 3, 3, 4]


def _five_node():
    # out-degrees: a 3, b 2, c 1, d 1, e 0
    edges = {("a", "b"): 400, ("a", "c"): 100, ("a", "d"): 100, ("b", "c"): 200, ("b", "e"): 200,
             ("c", "d"): 300, ("d", "e"): 100}
    return network_from_edges("abcde", edges)


def test_group_shares_single_group():
    net = _five_node()
    part = DegreePartition(net.nodes, (0, 0, 0), np.full(5, 4))
    df = group_feature_shares(net, part, {n: 1.0 for n in net.nodes})
    assert df.loc["D0.9<d"].tolist() == [1.0, 1.0, 1.0, 1.0]
    assert df.loc["total"].tolist() == [1.0, 1.0, 1.0, 1.0]


def test_group_shares_five_node_hand_count():
    net = _five_node()
    part = degree_partition(net)
    # positive out-degrees sorted [1, 1, 2, 3]: ranks 2, 3, 4 give D = 1, 2, 3
    assert part.thresholds == (1, 2, 3)
    assert part.groups.tolist() == [3, 2, 1, 1, 0]
    mv = {"a": 50.0, "b": 20.0, "c": 10.0, "d": 10.0, "e": 10.0}
    df = group_feature_shares(net, part, mv)
    assert df.loc["d=0"].tolist() == [0.0, 0.0, 0.1, 0.2]
    assert df.loc["0<d<=D0.3"].tolist() == pytest.approx([2 / 7, 4 / 14, 0.2, 0.4])
    assert df.loc["D0.3<d<=D0.6"].tolist() == pytest.approx([2 / 7, 4 / 14, 0.2, 0.2])
    assert df.loc["D0.6<d<=D0.9"].tolist() == pytest.approx([3 / 7, 6 / 14, 0.5, 0.2])
    assert df.loc["D0.9<d"].tolist() == [0.0, 0.0, 0.0, 0.0]


def test_group_shares_skip_nodes_without_value():
    net = _five_node()
    df = group_feature_shares(net, degree_partition(net), {"a": 1.0, "b": 1.0})
    assert df.loc["D0.6<d<=D0.9", "sample_ratio"] == 0.5


def test_composition_single_sector():
    net = _five_node()
    part = degree_partition(net)
    labels = [StockLabel(n, "finance", "lv") for n in net.nodes]
    df = composition_report(part, labels, "sector")
    row = df[(df.category == "finance")].set_index("group")["count"]
    assert [row[g] for g in GROUP_LABELS] == [part.sizes()[g] for g in GROUP_LABELS]
    assert row["total"] == 5


def test_composition_two_by_two():
    part = DegreePartition(("a", "b", "c", "d", "e"), (1, 2, 3), np.array([0, 0, 4, 4, 4]))
    labels = [StockLabel("a", "fin", "x"), StockLabel("b", "it", "x"), StockLabel("c", "fin", "x"),
              StockLabel("d", "fin", "x")]
    df = composition_report(part, labels, "sector").set_index(["category", "group"])
    assert df.loc[("fin", "d=0"), "count"] == 1
    assert df.loc[("fin", "D0.9<d"), "count"] == 2
    assert df.loc[("it", "d=0"), "count"] == 1
    assert df.loc[("fin", "D0.9<d"), "row_share"] == pytest.approx(2 / 3)
    assert df.loc[("fin", "D0.9<d"), "col_share"] == 1.0
    assert df.loc[("sample size", "total"), "count"] == 4
    assert df.loc[("(unlabeled)", "D0.9<d"), "count"] == 1


def test_top_by_out_degree_ties_by_id():
    net = network_from_edges("abcd", {("b", "a"): 1, ("c", "a"): 1, ("d", "a"): 1, ("d", "b"): 1})
    assert [net.nodes[i] for i in top_by_out_degree(net, 3)] == ["d", "b", "c"]


def test_rich_club_r1_and_complete():
    [p] = rich_club_curve(_five_node(), [1])
    assert p.e == 0 and math.isnan(p.density_rr)
    nodes = "abcd"
    complete = network_from_edges(nodes, {(s, t): 1 for s in nodes for t in nodes if s != t})
    assert [p.density_rr for p in rich_club_curve(complete, [2, 3, 4])] == [1.0, 1.0, 1.0]


def test_rich_club_enumeration():
    net = _five_node()
    # top-3 by out-degree: a(3), b(2), then c(1) before d(1) by id; intra edges a->b, a->c, b->c
    pts = rich_club_curve(net, [2, 3, 4])
    assert [p.e for p in pts] == [1, 3, 5]
    assert pts[1].density_rr == 0.5


def test_rich_club_rejects_large_r():
    with pytest.raises(ValueError):
        rich_club_curve(_five_node(), [6])


def test_degree_strength_scatter():
    net = _five_node()
    out = degree_strength_scatter(net, "out")
    assert "e" not in out.stock_id.tolist()
    assert out.set_index("stock_id").loc["a", "strength"] == 6.0
    inn = degree_strength_scatter(net, "in").set_index("stock_id")
    assert inn.loc["e", "strength"] == 3.0 and inn.loc["e", "other_degree"] == 0


def test_single_edge_strength():
    net = network_from_edges("ab", {("a", "b"): 1234})
    assert net.out_strength().tolist() == [1234, 0]
    assert net.in_strength().tolist() == [0, 1234]


def test_strengths_are_matrix_row_sums(rng):
    net = random_net(rng, 40, 0.1)
    w = np.zeros((40, 40))
    w[net.source, net.target] = net.weight
    assert np.array_equal(net.out_strength(), w.sum(axis=1))
    assert np.array_equal(net.in_strength(), w.sum(axis=0))


def test_degree_cdf():
    df = degree_cdf(_five_node())
    out = df[df["mode"] == "out"]
    assert out.degree.tolist() == [0, 1, 2, 3]
    assert out.cdf.tolist() == [0.2, 0.6, 0.8, 1.0]
