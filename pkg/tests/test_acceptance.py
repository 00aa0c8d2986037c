"""Acceptance criteria; each check prints one PASS/FAIL line.

The lines are repeated in an "acceptance criteria" section at the end of
the pytest run.
"""
import math
import os
import time
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from stocknet.causality import GrangerConfig, run_pairs, ty_granger
from stocknet.herding import adjacent_group_tests, herding_matrices, paired_one_tailed_t, portfolio_entropy
from stocknet.ingest import AggregatedHolding, aggregate_by_manager, parse_holdings, parse_labels
from stocknet.metrics import (GROUP_LABELS, assortativity, compute_stats, degree_partition,
                              group_feature_shares, top_by_out_degree)
from stocknet.network import build_bipartite, filter_edges, network_from_edges, project
from stocknet.pipeline import run
from stocknet.synthetic import make_market, write_market

from oracles import components, dense_adjacency, pearson, projection_oracle

SNAPSHOT = date(2015, 6, 30)


# ------------------------------------------------------------ criterion 1

def random_holdings(rng):
    n_inv = int(rng.integers(1, 21))
    n_stk = int(rng.integers(2, 31))
    out = {}
    for m in range(n_inv):
        k = int(rng.integers(1, n_stk + 1))
        picks = rng.choice(n_stk, size=k, replace=False)
        out[f"M{m:02d}"] = {f"S{s:02d}": int(rng.integers(1, 10**9)) for s in picks}
    return out


def test_criterion_1_projection_oracle(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(200):
        h = random_holdings(rng)
        rows = [AggregatedHolding(m, s, v, SNAPSHOT) for m, book in h.items() for s, v in book.items()]
        if project(build_bipartite(rows)).edge_weights() != projection_oracle(h):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 5.0
    assert verdict("1", ok, f"200 graphs, {mismatches} mismatches, {elapsed:.2f}s (limit 5s)")


# ------------------------------------------------------- criteria 2 and 3

GOLDEN = os.environ.get("STOCKNET_GOLDEN_DIR")
needs_golden = pytest.mark.skipif(not GOLDEN, reason="set STOCKNET_GOLDEN_DIR to the public holdings dataset")


@pytest.fixture(scope="module")
def golden():
    """Jun-2015 snapshot from ``$STOCKNET_GOLDEN_DIR/holdings.csv`` (and labels.csv)."""
    root = Path(GOLDEN)
    t0 = time.perf_counter()
    records = parse_holdings(root / "holdings.csv").records
    june = max(r.as_of_date for r in records if (r.as_of_date.year, r.as_of_date.month) == (2015, 6))
    bip = build_bipartite(aggregate_by_manager(r for r in records if r.as_of_date == june))
    net = filter_edges(project(bip), 0.95)
    labels = parse_labels(root / "labels.csv") if (root / "labels.csv").exists() else []
    return bip, net, labels, time.perf_counter() - t0


@needs_golden
def test_criterion_2_golden_topology(golden, verdict):
    bip, net, labels, elapsed = golden
    s = compute_stats(net)
    part = degree_partition(net)
    top5 = {net.nodes[i] for i in top_by_out_degree(net, 5)}
    zero_out = int((net.out_degree() == 0).sum())
    checks = {
        "nodes": s.node_count == 2709,
        "edges": abs(s.edge_count - 313307) <= 0.001 * 313307,
        "density": abs(s.density - 0.043) <= 0.001,
        "out_assort": abs(s.out_assort - -0.421) <= 0.01,
        "in_assort": abs(s.in_assort - -0.177) <= 0.01,
        "thresholds": part.thresholds == (451, 946, 1490),
        "top5": top5 == {"601318.SH", "601166.SH", "600036.SH", "600016.SH", "600030.SH"},
        "zero_out": zero_out == 2319,
        "runtime": elapsed < 120,
    }
    mv = {lab.stock_id: lab.market_value for lab in labels if lab.market_value is not None}
    if mv:
        shares = group_feature_shares(net, part, mv)
        checks["mv_share"] = abs(shares.loc["D0.9<d", "market_value"] - 0.18) <= 0.01
        checks["strength_share"] = abs(shares.loc["D0.9<d", "out_strength"] - 0.40) <= 0.01
    else:
        checks["mv_share"] = checks["strength_share"] = False
    failed = [k for k, v in checks.items() if not v]
    detail = (f"nodes={s.node_count} edges={s.edge_count} density={s.density:.4f} "
              f"assort(out/in)={s.out_assort:.3f}/{s.in_assort:.3f} thresholds={part.thresholds} "
              f"zero_out={zero_out} {elapsed:.1f}s; failed: {failed or 'none'}")
    assert verdict("2", not failed, detail)


@needs_golden
def test_criterion_3_herding_gradient(golden, verdict):
    bip, net, _, _ = golden
    hm = herding_matrices(bip, degree_partition(net))
    means = np.nanmean(hm.counts, axis=0)[1:]
    increasing = bool(np.all(np.diff(means) > 0))
    tests = adjacent_group_tests(hm)
    exempt = (GROUP_LABELS[1], "value")
    ok = increasing
    for _, row in tests.iterrows():
        for metric in ("count", "value"):
            p = row[f"p_{metric}"]
            ok &= (p > 0.05) if (row.group_low, metric) == exempt else (p < 0.001)
    ps = ", ".join(f"{r.group_low}: {r.p_count:.3g}/{r.p_value:.3g}" for r in tests.itertuples())
    assert verdict("3", ok, f"count means increasing={increasing}; p(count/value) {ps}")


# ------------------------------------------------------------ criterion 4

def test_criterion_4_granger_calibration(verdict):
    t0 = time.perf_counter()
    cfg = GrangerConfig()
    rng = np.random.default_rng(4)
    null = [ty_granger(rng.normal(size=200), rng.normal(size=200), cfg) for _ in range(1000)]
    size = sum(o.reject for o in null) / len(null)

    power_rej = 0
    scale_err = 0.0
    for _ in range(200):
        x = rng.normal(size=200)
        y = np.empty(200)
        y[0] = rng.normal(0, 0.1)
        y[1:] = 0.8 * x[:-1] + rng.normal(0, 0.1, 199)
        power_rej += ty_granger(x, y, cfg).reject
    for _ in range(50):
        x, y = rng.normal(size=200), rng.normal(size=200)
        a = ty_granger(x, y, cfg).p_value
        b = ty_granger(x * 1e-3 + 5.0, y * 1e4 - 2.0, cfg).p_value
        scale_err = max(scale_err, abs(a - b))
    power = power_rej / 200
    elapsed = time.perf_counter() - t0
    ok = 0.03 <= size <= 0.07 and power >= 0.95 and scale_err <= 1e-9 and elapsed < 180
    assert verdict("4", ok, f"size={size:.3f} (BIC lag choice) power={power:.3f} "
                            f"max |dp| under rescaling={scale_err:.1e} {elapsed:.1f}s")


# ------------------------------------------------------------ criterion 5

@pytest.fixture(scope="module")
def synthetic_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("crit5")
    cfg = write_market(make_market(seed=0), d, seed=0)
    run(cfg)
    return d / "out"


def test_criterion_5a_group_ranking(synthetic_run, verdict):
    gm = pd.read_csv(synthetic_run / "timeseries" / "group_means.csv")
    wide = gm.pivot(index="window", columns="group", values="mean_change")
    top = wide.pop("D0.9<d")
    others = wide.dropna(axis=1, how="all")
    ok = bool((top.values[:, None] > others.values).all())
    margin = float((top.values[:, None] - others.values).min())
    assert verdict("5a", ok, f"hub group above {others.shape[1]} other groups in all {len(top)} windows "
                             f"(min margin {margin:.4f})")


def test_criterion_5b_scatter_and_nulls(synthetic_run, verdict):
    sc = pd.read_csv(synthetic_run / "timeseries" / "scatter.csv")
    emp = sc[sc.experiment == "empirical"]
    below = bool((emp.successor_mean < emp.hub_change).all())
    gaps = pd.read_csv(synthetic_run / "timeseries" / "null_gaps.csv")
    within = bool((gaps.gap_mean.abs() <= 2 * gaps.gap_se).all())
    desc = "; ".join(f"{r.experiment} gap={r.gap_mean:.2e} se={r.gap_se:.2e}" for r in gaps.itertuples())
    assert verdict("5b", below and within and len(gaps) == 2,
                   f"{len(emp)} empirical points below diagonal={below}; {desc}")


def test_criterion_5c_hub_ratios(synthetic_run, verdict):
    hubs = pd.read_csv(synthetic_run / "causality" / "hub_ratios.csv", comment="#")
    avg = pd.read_csv(synthetic_run / "causality" / "average_level.csv", comment="#").iloc[0]
    ok = bool((hubs.ratio >= avg.ratio + 0.2).all()) and avg.sampled >= 1000
    assert verdict("5c", ok, f"hub ratios {hubs.ratio.round(3).tolist()} vs average level "
                             f"{avg.ratio:.3f} over {int(avg.sampled)} sampled pairs")


# ------------------------------------------------------------ criterion 6

@pytest.fixture(scope="module")
def perf_runs():
    rng = np.random.default_rng(6)
    n = 500
    nodes = [f"{i:06d}.SZ" for i in range(n)]
    w = rng.integers(1, 10**8, size=(n, n))
    edges = {(nodes[i], nodes[j]): int(w[i, j]) for i in range(n) for j in range(n) if i != j}
    net = filter_edges(network_from_edges(nodes, edges), 0.9)
    levels = np.cumsum(rng.normal(0, 1e-3, size=(n, 240)), axis=1)
    changes = dict(zip(nodes, levels))
    pairs = net.edge_pairs()
    t0 = time.perf_counter()
    one = run_pairs(pairs, changes, workers=1)
    t1 = time.perf_counter() - t0
    t0 = time.perf_counter()
    eight = run_pairs(pairs, changes, workers=8)
    t8 = time.perf_counter() - t0
    return len(pairs), one, eight, t1, t8


def _fingerprint(run_):
    return [(o.source, o.target, o.status, o.lag_m, o.wald_stat, o.p_value) for o in run_.outcomes]


@pytest.mark.slow
def test_criterion_6_single_thread_and_identity(perf_runs, verdict):
    n_pairs, one, eight, t1, _ = perf_runs
    identical = _fingerprint(one) == _fingerprint(eight)
    ok = identical and t1 < 600 and one.tested > 0
    assert verdict("6 (runtime, identity)", ok,
                   f"{n_pairs} edge tests ({one.tested} tested) in {t1:.1f}s single-threaded (limit 600s); "
                   f"bit-identical with 8 workers={identical}")


@pytest.mark.slow
@pytest.mark.xfail((os.cpu_count() or 1) < 8, strict=False,
                   reason="fewer than 8 CPUs; an 8-worker speedup cannot materialise")
def test_criterion_6_scaling(perf_runs, verdict):
    _, _, _, t1, t8 = perf_runs
    speedup = t1 / t8
    assert verdict("6 (scaling)", speedup >= 4.0,
                   f"speedup {speedup:.2f}x with 8 workers (need >= 4x; {os.cpu_count()} CPU available)")


# ------------------------------------------------------------ criterion 7

def test_criterion_7_metric_cross_checks(verdict):
    rng = np.random.default_rng(7)
    worst = 0.0
    bad = []
    for g in range(50):
        n = int(rng.integers(2, 101))
        mask = rng.random((n, n)) < rng.uniform(0.01, 0.3)
        np.fill_diagonal(mask, False)
        nodes = [f"s{i:03d}" for i in range(n)]
        wts = rng.integers(1, 10**6, size=(n, n))
        pairs = list(zip(*np.nonzero(mask)))
        if not pairs:
            continue
        net = network_from_edges(nodes, {(nodes[i], nodes[j]): int(wts[i, j]) for i, j in pairs})
        s = compute_stats(net)
        a = dense_adjacency(n, pairs)
        wa = a * wts
        out_d, in_d = a.sum(1), a.sum(0)
        scc, wcc = components(a.astype(bool), True), components(a.astype(bool), False)
        exact = (s.n_scc == len(scc) and s.max_scc_size == max(scc) and s.n_wcc == len(wcc)
                 and s.max_wcc_size == max(wcc)
                 and np.array_equal(net.out_degree(), out_d) and np.array_equal(net.in_degree(), in_d)
                 and np.allclose(net.out_strength(), wa.sum(1), rtol=0, atol=1e-9)
                 and np.allclose(net.in_strength(), wa.sum(0), rtol=0, atol=1e-9))
        diffs = [abs(s.density - a.sum() / (n * (n - 1)))]
        for mode, deg in (("out", out_d), ("in", in_d)):
            ref = pearson([deg[i] for i, _ in pairs], [deg[j] for _, j in pairs])
            got = assortativity(net, mode)
            if math.isnan(ref) or math.isnan(got):
                exact &= math.isnan(ref) and math.isnan(got)
            else:
                diffs.append(abs(got - ref))
        worst = max(worst, *diffs)
        if not exact:
            bad.append(g)

    stat_err = 0.0
    for _ in range(50):
        k = int(rng.integers(3, 60))
        lo, hi = rng.normal(size=k), rng.normal(0.2, 1.0, size=k)
        ours = paired_one_tailed_t(lo, hi)
        ref = stats.ttest_rel(lo, hi, alternative="less")
        stat_err = max(stat_err, abs(ours.t_stat - ref.statistic), abs(ours.p_value - ref.pvalue))
        vals = rng.integers(1, 10**8, size=k)
        rows = [AggregatedHolding("M", f"S{i:02d}", int(v), SNAPSHOT) for i, v in enumerate(vals)]
        stat_err = max(stat_err, abs(portfolio_entropy(build_bipartite(rows), "M") - stats.entropy(vals)))
    ok = not bad and worst <= 1e-9 and stat_err <= 1e-6
    assert verdict("7", ok, f"50 graphs: {len(bad)} exact mismatches, max float diff {worst:.1e}; "
                            f"t test/entropy max diff {stat_err:.1e}")
