from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stocknet.ingest import AggregatedHolding
from stocknet.network import (ChecksumError, build_bipartite, dumps_network, filter_edges,
                              filter_sweep, load_network, nearest_rank, network_from_edges,
                              project, save_network, weight_threshold)

from oracles import nearest_rank_oracle, projection_oracle

D = date(2015, 6, 30)


def _bip(holdings: dict[str, dict[str, int]]):
    return build_bipartite([AggregatedHolding(m, s, v, D)
                            for m, h in holdings.items() for s, v in h.items()])


def test_two_by_two_complete():
    b = _bip({"m1": {"a": 1, "b": 2}, "m2": {"a": 3, "b": 4}})
    assert b.edge_count == 4


def test_single_holding_investor():
    b = _bip({"m1": {"a": 5}, "m2": {"a": 1, "b": 1}})
    assert b.holdings_of("m1") == {"a": 5}


def test_single_investor_projection():
    net = project(_bip({"m": {"i": 100, "j": 50}}))
    assert net.edge_weights() == {("i", "j"): 100, ("j", "i"): 50}


def test_common_investor_projection():
    net = project(_bip({"m1": {"i": 100, "j": 50}, "m2": {"i": 30, "j": 70}, "m3": {"i": 20}}))
    assert net.edge_weights() == {("i", "j"): 130, ("j", "i"): 120}


def test_no_shared_investor_no_edge():
    net = project(_bip({"m1": {"i": 1}, "m2": {"j": 1}}))
    assert net.edge_count == 0
    assert net.nodes == ("i", "j")


def test_build_rejects_mixed_dates_and_duplicates():
    with pytest.raises(ValueError):
        build_bipartite([AggregatedHolding("m", "a", 1, D), AggregatedHolding("m", "b", 1, date(2014, 12, 31))])
    with pytest.raises(ValueError):
        build_bipartite([AggregatedHolding("m", "a", 1, D), AggregatedHolding("m", "a", 2, D)])
    with pytest.raises(ValueError):
        build_bipartite([])


holdings_strategy = st.dictionaries(
    st.sampled_from([f"m{i}" for i in range(6)]),
    st.dictionaries(st.sampled_from([f"s{i}" for i in range(8)]), st.integers(1, 10**12), min_size=1),
    min_size=1,
)


@settings(max_examples=150, deadline=None)
@given(holdings_strategy)
def test_projection_matches_oracle(holdings):
    assert project(_bip(holdings)).edge_weights() == projection_oracle(holdings)


def test_projection_has_no_self_loops(market_bipartite):
    net = project(market_bipartite)
    assert not (net.source == net.target).any()
    assert (np.diff(net.source * net.node_count + net.target) > 0).all()


@pytest.mark.parametrize("q,expected", [(0.0, 10), (0.3, 30), (0.6, 60), (0.9, 90), (1.0, 100)])
def test_nearest_rank_on_tens(q, expected):
    assert nearest_rank(list(range(10, 101, 10)), q) == expected


def test_nearest_rank_95_of_100():
    assert nearest_rank(list(range(1, 101)), 0.95) == 95


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 50), min_size=1, max_size=40),
       st.sampled_from([0.0, 0.05, 0.3, 0.4, 0.5, 0.6, 0.7, 0.9, 0.95, 0.99]))
def test_nearest_rank_matches_counting_definition(values, q):
    assert nearest_rank(sorted(values), q) == nearest_rank_oracle(values, q)


def _chain(weights):
    nodes = [f"n{i:03d}" for i in range(len(weights) + 1)]
    return network_from_edges(nodes, {(nodes[i], nodes[i + 1]): w for i, w in enumerate(weights)})


def test_filter_k_zero_is_identity():
    net = _chain([5, 1, 3])
    assert filter_edges(net, 0).edge_weights() == net.edge_weights()


def test_filter_one_to_hundred_at_95():
    net = _chain(list(range(1, 101)))
    assert weight_threshold(net, 0.95) == 95
    f = filter_edges(net, 0.95)
    assert sorted(f.weight.tolist()) == [95, 96, 97, 98, 99, 100]
    assert f.node_count == net.node_count
    assert f.k == 0.95


def test_filter_keeps_ties():
    net = _chain([1, 2, 2, 2, 3])
    assert sorted(filter_edges(net, 0.5).weight.tolist()) == [2, 2, 2, 3]


def test_filter_rejects_bad_k():
    with pytest.raises(ValueError):
        filter_edges(_chain([1]), 1.0)
    with pytest.raises(ValueError):
        filter_edges(_chain([1]), -0.1)


def test_sweep_single_zero():
    net = _chain([1, 2, 3])
    [pt] = filter_sweep(net, [0])
    assert pt.ws_ratio == 1.0 and pt.edge_count == 3


def test_sweep_two_edges():
    # nearest rank of {1, 3} at 0.5 is 1, so both edges survive; above 0.5 only the 3 does
    net = _chain([1, 3])
    pts = filter_sweep(net, [0, 0.5, 0.75])
    assert [p.weight_quantile for p in pts] == [1, 1, 3]
    assert [p.ws_ratio for p in pts] == [1.0, 1.0, 0.75]
    assert [p.edge_count for p in pts] == [2, 2, 1]
    assert [p.lwcc_size for p in pts] == [3, 3, 2]


def test_sweep_requires_ascending():
    with pytest.raises(ValueError):
        filter_sweep(_chain([1, 2]), [0.5, 0.1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 1000), min_size=1, max_size=60))
def test_sweep_edge_count_non_increasing(weights):
    pts = filter_sweep(_chain(weights), [round(0.05 * i, 2) for i in range(20)])
    counts = [p.edge_count for p in pts]
    assert counts == sorted(counts, reverse=True)
    assert all(0 < p.ws_ratio <= 1 for p in pts)


def test_round_trip(tmp_path):
    net = network_from_edges(["a", "b", "c"], {("a", "b"): 5, ("b", "c"): 7, ("c", "a"): 1},
                             k=0.5, build_date="2015-06-30", source_hash="abc")
    save_network(net, tmp_path / "n.net")
    assert load_network(tmp_path / "n.net") == net


def test_round_trip_keeps_isolated_nodes(tmp_path):
    net = network_from_edges(["a", "b", "z"], {("a", "b"): 5})
    save_network(net, tmp_path / "n.net")
    back = load_network(tmp_path / "n.net")
    assert back == net
    assert back.nodes == ("a", "b", "z")


def test_tampered_file_fails(tmp_path):
    net = network_from_edges(["a", "b"], {("a", "b"): 5})
    save_network(net, tmp_path / "n.net")
    text = (tmp_path / "n.net").read_text().replace("a,b,5", "a,b,6")
    (tmp_path / "n.net").write_text(text)
    with pytest.raises(ChecksumError):
        load_network(tmp_path / "n.net")


def test_resave_is_byte_identical(tmp_path, market_network):
    save_network(market_network, tmp_path / "a.net")
    save_network(load_network(tmp_path / "a.net"), tmp_path / "b.net")
    assert (tmp_path / "a.net").read_bytes() == (tmp_path / "b.net").read_bytes()
    assert dumps_network(market_network).startswith("# stocknet network v1\n")
