"""Staged end-to-end run driven by a flat ``key = value`` config file.

Stages run in a fixed order and write under ``<output_dir>/<stage>/``.
Each stage has a key hashed from its parameters and the checksums of the
files it reads; a stage whose key and artifact checksums match the previous
manifest is marked ``cached`` and not rerun.

Seed derivation: the stage seed for a trade date is the first 32-bit word of
``SeedSequence([seed, stage_id, date.toordinal(), experiment])``; per-trial
streams are then ``SeedSequence([stage_seed, trial])``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import shutil
import time
from dataclasses import asdict, dataclass, field, fields
from datetime import date
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

from . import __version__
from .causality import (GrangerConfig, WEIGHT_BIN_LABELS, average_level, ratio_by_weight_bin,
                        ratio_for_hubs, rich_club_granger, run_pairs, weight_partition,
                        write_outcomes)
from .herding import adjacent_group_tests, entropy_loss_table, herding_matrices, top_group_investors
from .ingest import (SessionCalendar, aggregate_by_manager, parse_eod, parse_holdings, parse_labels,
                     parse_minute_bars, read_aggregated, write_aggregated, write_rejections)
from .metrics import (GROUP_LABELS, composition_report, compute_stats, degree_partition, group_feature_shares,
                      rich_club_curve)
from .network import build_bipartite, filter_edges, filter_sweep, load_network, project, save_network
from .timeseries import (CRASH_DATES, daily_net_changes, day_changes, group_mean_changes,
                         hub_successor_scatter, limit_down_counts, random_experiment_edges,
                         random_experiment_nodes, window_end_labels, windowed_changes)

logger = logging.getLogger(__name__)

STAGES = ("ingest", "network", "metrics", "herding", "timeseries", "causality")
STAGE_IDS = {name: i + 1 for i, name in enumerate(STAGES)}
MANIFEST = "manifest.json"


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    pass


# ------------------------------------------------------------------ config


def _date_list(text: str) -> tuple[date, ...]:
    return tuple(date.fromisoformat(p.strip()) for p in text.split(",") if p.strip())


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


PATH_KEYS = ("holdings", "minute_bars", "eod", "labels")


@dataclass
class RunConfig:
    holdings: Path | None = None
    minute_bars: Path | None = None
    eod: Path | None = None
    labels: Path | None = None
    snapshot_date: date | None = None
    crash_dates: tuple[date, ...] = CRASH_DATES
    filter_k: float = 0.95
    window_minutes: int = 10
    window_statistic: str = "last"
    top_n: int = 5
    trials: int = 100
    seed: int = 0
    alpha: float = 0.05
    max_lag: int = 10
    lag_criterion: str = "bic"
    d_max: int = 1
    min_valid_points: int = 60
    min_variance: float = 1e-12
    average_sample_size: int = 100_000
    average_full: bool = False
    workers: int = 1
    session: str = "09:30-11:30,13:00-15:00"
    sweep_ks: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(20))
    rich_club_r: tuple[int, ...] = (5, 10, 20, 50, 100, 200, 500, 1000)
    output_dir: Path = Path("out")

    @property
    def granger(self) -> GrangerConfig:
        return GrangerConfig(self.alpha, self.max_lag, self.lag_criterion, self.d_max,
                             self.min_valid_points, self.min_variance)

    @property
    def calendar(self) -> SessionCalendar:
        return SessionCalendar.parse(self.session)

    def canonical(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = [x.isoformat() if isinstance(x, date) else x for x in v]
            elif isinstance(v, (Path, date)):
                v = str(v)
            out[f.name] = v
        return out

    def hash(self) -> str:
        data = self.canonical()
        data.pop("workers")  # results do not depend on it
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


_CONVERTERS: dict[str, Callable[[str], object]] = {
    "snapshot_date": date.fromisoformat,
    "crash_dates": _date_list,
    "filter_k": float,
    "window_minutes": int,
    "window_statistic": str.strip,
    "top_n": int,
    "trials": int,
    "seed": int,
    "alpha": float,
    "max_lag": int,
    "lag_criterion": str.strip,
    "d_max": int,
    "min_valid_points": int,
    "min_variance": float,
    "average_sample_size": int,
    "average_full": _bool,
    "workers": int,
    "session": str.strip,
    "sweep_ks": _float_list,
    "rich_club_r": _int_list,
    "output_dir": Path,
}


@dataclass
class Finding:
    level: str  # "error" or "warning"
    message: str

    def __str__(self) -> str:
        return f"{self.level}: {self.message}"


def read_config_text(path: str | Path) -> tuple[dict[str, str], list[Finding]]:
    raw, findings = {}, []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            findings.append(Finding("error", f"line {lineno}: expected 'key = value'"))
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key in raw:
            findings.append(Finding("warning", f"line {lineno}: {key} set twice, last value wins"))
        raw[key] = value
    return raw, findings


def _build(path: str | Path) -> tuple[RunConfig, list[Finding]]:
    path = Path(path)
    raw, findings = read_config_text(path)
    base = path.resolve().parent
    cfg = RunConfig()
    for key, value in raw.items():
        if key in PATH_KEYS:
            p = Path(value)
            setattr(cfg, key, p if p.is_absolute() else base / p)
        elif key in _CONVERTERS:
            try:
                setattr(cfg, key, _CONVERTERS[key](value))
            except ValueError as exc:
                findings.append(Finding("error", f"{key}: cannot parse {value!r} ({exc})"))
        else:
            findings.append(Finding("warning", f"unknown key {key!r} ignored"))
    if not cfg.output_dir.is_absolute():
        cfg.output_dir = base / cfg.output_dir
    findings += _check(cfg)
    return cfg, findings


def _check(cfg: RunConfig) -> list[Finding]:
    out = []
    err = lambda msg: out.append(Finding("error", msg))  # noqa: E731
    warn = lambda msg: out.append(Finding("warning", msg))  # noqa: E731
    if cfg.holdings is None:
        err("holdings: required key missing")
    for key in PATH_KEYS:
        p = getattr(cfg, key)
        if p is not None and not p.is_file():
            err(f"{key}: input file not found: {p}")
    if not 0 <= cfg.filter_k < 1:
        err(f"filter_k must lie in [0, 1), got {cfg.filter_k}")
    try:
        cal = cfg.calendar
        if cfg.window_minutes <= 0 or cal.minutes % cfg.window_minutes:
            err(f"window_minutes={cfg.window_minutes} does not divide the {cal.minutes}-minute session")
    except ValueError as exc:
        err(f"session: {exc}")
    if cfg.window_statistic not in ("last", "mean"):
        err("window_statistic must be 'last' or 'mean'")
    if cfg.top_n < 1:
        err("top_n must be >= 1")
    if cfg.trials < 1:
        err("trials must be >= 1")
    if cfg.workers < 1:
        err("workers must be >= 1")
    if not cfg.average_full and cfg.average_sample_size < 1000:
        err("average_sample_size must be at least 1000")
    if any(not 0 <= k < 1 for k in cfg.sweep_ks) or list(cfg.sweep_ks) != sorted(cfg.sweep_ks):
        err("sweep_ks must be ascending values in [0, 1)")
    try:
        cfg.granger
    except ValueError as exc:
        err(str(exc))
    if cfg.minute_bars is None:
        warn("minute_bars not set: timeseries and causality stages will be skipped")
    elif cfg.eod is None:
        err("eod is required with minute_bars (previous closes)")
    if cfg.labels is None:
        warn("labels not set: composition and market-value shares will be empty")
    if not cfg.crash_dates:
        warn("crash_dates is empty: timeseries and causality stages will be skipped")
    return out


def validate(path: str | Path) -> list[Finding]:
    """Hard errors and warnings for a config file; errors sort first."""
    try:
        _, findings = _build(path)
    except OSError as exc:
        return [Finding("error", f"cannot read config: {exc}")]
    return sorted(findings, key=lambda f: f.level != "error")


def load_config(path: str | Path) -> RunConfig:
    cfg, findings = _build(path)
    errors = [f.message for f in findings if f.level == "error"]
    if errors:
        raise ConfigError("; ".join(errors))
    for f in findings:
        logger.warning("%s", f.message)
    return cfg


def stage_seed(seed: int, stage: str, day: date, experiment: int = 0) -> int:
    ss = np.random.SeedSequence([int(seed), STAGE_IDS[stage], day.toordinal(), experiment])
    return int(ss.generate_state(1)[0])


# --------------------------------------------------------------- utilities


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_csv(df: pd.DataFrame, path: Path, header: list[str] | None = None) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        for line in header or ():
            fh.write(f"# {line}\n")
        df.to_csv(fh, index=False, lineterminator="\n")


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", keep_default_na=True, dtype={"stock_id": str})


# ------------------------------------------------------------------ stages
#
# Each stage function takes explicit input paths and an output directory so
# the CLI can call it directly for partial pipelines.


def stage_ingest(holdings: Path, out: Path, snapshot_date: date | None = None) -> None:
    parsed = parse_holdings(holdings)
    write_rejections(parsed.rejections, out / "rejections.jsonl")
    dates = sorted({r.as_of_date for r in parsed.records})
    if not dates:
        raise StageError("no valid holding records")
    if snapshot_date is None:
        if len(dates) > 1:
            raise StageError(f"holdings span {len(dates)} dates; set snapshot_date")
        snapshot_date = dates[0]
    records = [r for r in parsed.records if r.as_of_date == snapshot_date]
    if not records:
        raise StageError(f"no holdings dated {snapshot_date}")
    agg = aggregate_by_manager(records)
    write_aggregated(agg, out / "holdings.csv")
    _write_json({
        "snapshot_date": snapshot_date.isoformat(),
        "accepted": parsed.accepted,
        "rejected": parsed.rejected,
        "managers": len({a.manager_id for a in agg}),
        "stocks": len({a.stock_id for a in agg}),
        "holdings": len(agg),
        "total_value_cents": sum(a.value_cents for a in agg),
    }, out / "summary.json")


def stage_network(aggregated: Path, out: Path, filter_k: float, sweep_ks) -> None:
    full = project(build_bipartite(read_aggregated(aggregated)))
    rows = [asdict(p) for p in filter_sweep(full, list(sweep_ks))] if sweep_ks else []
    _write_csv(pd.DataFrame(rows, columns=["k", "weight_quantile", "ws_ratio", "lwcc_size", "edge_count"]),
               out / "filter_sweep.csv")
    net = filter_edges(full, filter_k)
    save_network(net, out / "network.net")
    _write_json({"unfiltered_edges": full.edge_count, "edges": net.edge_count,
                 "nodes": net.node_count, "k": filter_k}, out / "summary.json")


def stage_metrics(network: Path, out: Path, labels: Path | None, r_values) -> None:
    net = load_network(network)
    stats = compute_stats(net)
    part = degree_partition(net)
    info = stats.to_dict()
    info.update(snapshot_date=net.build_date, filter_k=net.k, thresholds=list(part.thresholds),
                group_sizes=part.sizes(), zero_out_degree=int((net.out_degree() == 0).sum()))
    _write_json(info, out / "stats.json")

    _write_csv(pd.DataFrame({
        "stock_id": net.nodes,
        "out_degree": net.out_degree(),
        "in_degree": net.in_degree(),
        "group": [GROUP_LABELS[g] for g in part.groups],
    }), out / "partition.csv")

    out_deg, in_deg = net.out_degree(), net.in_degree()
    ds = pd.DataFrame({
        "stock_id": net.nodes,
        "out_degree": out_deg,
        "out_strength": net.out_strength() / 100.0,
        "in_degree": in_deg,
        "in_strength": net.in_strength() / 100.0,
        "out_degree_cdf": np.searchsorted(np.sort(out_deg), out_deg, side="right") / net.node_count,
        "in_degree_cdf": np.searchsorted(np.sort(in_deg), in_deg, side="right") / net.node_count,
    })
    _write_csv(ds, out / "degree_strength.csv")

    labels_list = parse_labels(labels) if labels else []
    mv = {lab.stock_id: lab.market_value for lab in labels_list if lab.market_value is not None}
    if not mv:
        mv = {n: 0.0 for n in net.nodes}
    shares = group_feature_shares(net, part, mv).reset_index()
    _write_csv(shares, out / "group_shares.csv")
    comp = pd.concat([composition_report(part, labels_list, axis).assign(axis=axis)
                      for axis in ("sector", "style")], ignore_index=True)
    _write_csv(comp[["axis", "category", "group", "count", "row_share", "col_share"]],
               out / "composition.csv")
    rs = [r for r in r_values if r <= net.node_count]
    _write_csv(pd.DataFrame([asdict(p) for p in rich_club_curve(net, rs)],
                            columns=["r", "e", "density_rr", "granger_density"]).drop(columns="granger_density"),
               out / "rich_club.csv")


def stage_herding(aggregated: Path, network: Path, out: Path, eod: Path | None,
                  dates) -> None:
    bip = build_bipartite(read_aggregated(aggregated))
    part = degree_partition(load_network(network))
    matrix = herding_matrices(bip, part)
    _write_csv(matrix.to_long(), out / "herding_matrix.csv")
    _write_csv(adjacent_group_tests(matrix), out / "ttests.csv")
    _write_csv(top_group_investors(matrix), out / "top_institutions.csv")
    closes = parse_eod(eod) if eod else {}
    frames = []
    for day in dates or ():
        net_changes = daily_net_changes(closes, day)
        if not net_changes:
            logger.warning("no end-of-day changes on %s; loss left empty", day)
        frames.append(entropy_loss_table(bip, net_changes or None).assign(date=day.isoformat()))
    if not frames:
        frames.append(entropy_loss_table(bip, None).assign(date=""))
    table = pd.concat(frames, ignore_index=True)
    _write_csv(table[["date", "institution", "entropy", "absolute_loss", "n_stocks"]],
               out / "entropy_loss.csv")


def _load_days(network, bars: Path, eod: Path, dates, calendar):
    net = load_network(network)
    series = parse_minute_bars(bars, calendar, parse_eod(eod), universe=net.nodes)
    by_day: dict[date, list] = {}
    for s in series:
        by_day.setdefault(s.trade_date, []).append(s)
    days = []
    for d in dates:
        if d not in by_day:
            logger.warning("no minute bars for %s; date skipped", d)
            continue
        days.append((d, by_day[d]))
    return net, days


def stage_timeseries(network: Path, bars: Path, eod: Path, out: Path, dates, window_minutes: int = 10,
                     statistic: str = "last", top_n: int = 5, trials: int = 100, seed: int = 0,
                     calendar: SessionCalendar | None = None) -> None:
    calendar = calendar or SessionCalendar()
    net, days = _load_days(network, bars, eod, dates, calendar)
    part = degree_partition(net)
    means, scatter, gaps = [], [], []
    for day, series in days:
        changes = day_changes(series)
        if not changes:
            logger.warning("no usable series on %s", day)
            continue
        w = windowed_changes(changes, window_minutes, statistic)
        ends = window_end_labels(w.n_windows, window_minutes, calendar)
        gm = group_mean_changes(w, part)
        ld = limit_down_counts(series, window_minutes)
        gm = gm.merge(ld, on="window", how="left")
        gm.insert(0, "date", day.isoformat())
        gm.insert(2, "window_end", [ends[i - 1] for i in gm["window"]])
        means.append(gm)

        exps = [("empirical", hub_successor_scatter(net, w, top_n))]
        for k, fn in enumerate((random_experiment_edges, random_experiment_nodes), start=1):
            res = fn(net, w, top_n, trials, stage_seed(seed, "timeseries", day, k))
            exps.append((res.experiment, res.mean_series()))
            g, se = res.diagonal_gap()
            gaps.append((day.isoformat(), res.experiment, res.trials, g, se))
        for name, ss in exps:
            for s in ss:
                for i in range(w.n_windows):
                    scatter.append((day.isoformat(), name, s.hub_id, s.successor_count, i + 1, ends[i],
                                    s.hub_changes[i], s.successor_means[i]))
    cols = ["date", "window", "window_end", "group", "mean_change", "n_stocks", "active", "limit_down"]
    _write_csv(pd.concat(means, ignore_index=True)[cols] if means else pd.DataFrame(columns=cols),
               out / "group_means.csv")
    _write_csv(pd.DataFrame(scatter, columns=["date", "experiment", "hub", "successor_count", "window",
                                              "window_end", "hub_change", "successor_mean"]),
               out / "scatter.csv")
    _write_csv(pd.DataFrame(gaps, columns=["date", "experiment", "trials", "gap_mean", "gap_se"]),
               out / "null_gaps.csv")


def stage_causality(network: Path, bars: Path, eod: Path, out: Path, dates, cfg: GrangerConfig,
                    sample_size: int = 100_000, full: bool = False, seed: int = 0, workers: int = 1,
                    top_n: int = 5, r_values=(), calendar: SessionCalendar | None = None) -> None:
    calendar = calendar or SessionCalendar()
    net, days = _load_days(network, bars, eod, dates, calendar)
    header = [f"granger: {cfg.describe()}"]
    bins_rows, hub_rows, rc_rows, avg_rows = [], [], [], []
    wp = weight_partition(net)
    rs = [r for r in r_values if r <= net.node_count]
    for day, series in days:
        iso = day.isoformat()
        changes = day_changes(series)
        t0 = time.perf_counter()
        run = run_pairs(net.edge_pairs(), changes, cfg, workers=workers, day=iso)
        logger.info("%s: %d edge tests in %.1fs (%d skipped)", iso, len(run.outcomes),
                    time.perf_counter() - t0, run.skipped)
        write_outcomes(run.outcomes, out / f"outcomes_{iso}.csv")
        outcomes = run.by_pair()
        bins = ratio_by_weight_bin(outcomes, net, wp)
        bins.insert(0, "date", iso)
        bins["upper_threshold"] = [wp.thresholds[i] / 100.0 if i < 3 else math.nan
                                   for i in range(len(WEIGHT_BIN_LABELS))]
        bins_rows.append(bins)
        hubs = ratio_for_hubs(outcomes, net, top_n)
        hubs.insert(0, "date", iso)
        hub_rows.append(hubs)
        if len(changes) >= 2:
            lvl = average_level(changes, cfg, sample_size, stage_seed(seed, "causality", day),
                                full, workers, iso)
            avg_rows.append((iso, lvl.ratio, lvl.std_error, lvl.tested, lvl.skipped, lvl.sampled, lvl.full))
        for p in rich_club_granger(outcomes, net, rs):
            rc_rows.append((iso, p.r, p.e, p.density_rr, p.granger_density))
    _write_csv(pd.concat(bins_rows, ignore_index=True) if bins_rows else pd.DataFrame(),
               out / "weight_bins.csv", header)
    _write_csv(pd.concat(hub_rows, ignore_index=True) if hub_rows else pd.DataFrame(),
               out / "hub_ratios.csv", header)
    _write_csv(pd.DataFrame(avg_rows, columns=["date", "ratio", "std_error", "tested", "skipped",
                                               "sampled", "full"]), out / "average_level.csv", header)
    _write_csv(pd.DataFrame(rc_rows, columns=["date", "r", "e", "density_rr", "granger_density"]),
               out / "rich_club_granger.csv", header)


# ------------------------------------------------------------------- runner


@dataclass
class StageRecord:
    status: str
    key: str = ""
    artifacts: dict[str, str] = field(default_factory=dict)
    seconds: float = 0.0
    message: str = ""


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    output_dir: str
    stages: dict[str, StageRecord]

    def to_json(self) -> str:
        data = {"config_hash": self.config_hash, "tool_version": self.tool_version,
                "output_dir": self.output_dir,
                "stages": {k: asdict(v) for k, v in self.stages.items()}}
        return json.dumps(data, indent=2) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        stages = {k: StageRecord(**v) for k, v in data["stages"].items()}
        return cls(data["config_hash"], data["tool_version"], data["output_dir"], stages)

    def statuses(self) -> dict[str, str]:
        return {k: v.status for k, v in self.stages.items()}


def _plan(cfg: RunConfig, root: Path) -> dict[str, tuple[dict, list[Path], Callable[[Path], None]] | None]:
    """Per stage: (parameters, files read, callable) or None when skipped."""
    agg = root / "ingest" / "holdings.csv"
    net = root / "network" / "network.net"
    inputs = lambda *ps: [p for p in ps if p is not None]  # noqa: E731
    have_bars = cfg.minute_bars is not None and bool(cfg.crash_dates)
    dates = [d.isoformat() for d in cfg.crash_dates]
    plan = {
        "ingest": ({"snapshot_date": str(cfg.snapshot_date)}, inputs(cfg.holdings),
                   lambda out: stage_ingest(cfg.holdings, out, cfg.snapshot_date)),
        "network": ({"filter_k": cfg.filter_k, "sweep_ks": list(cfg.sweep_ks)}, [agg],
                    lambda out: stage_network(agg, out, cfg.filter_k, cfg.sweep_ks)),
        "metrics": ({"rich_club_r": list(cfg.rich_club_r)}, inputs(net, cfg.labels),
                    lambda out: stage_metrics(net, out, cfg.labels, cfg.rich_club_r)),
        "herding": ({"dates": dates}, inputs(agg, net, cfg.eod),
                    lambda out: stage_herding(agg, net, out, cfg.eod, cfg.crash_dates)),
        "timeseries": None,
        "causality": None,
    }
    if have_bars:
        ts_params = {"dates": dates, "window_minutes": cfg.window_minutes,
                     "statistic": cfg.window_statistic, "top_n": cfg.top_n, "trials": cfg.trials,
                     "seed": cfg.seed, "session": cfg.session}
        plan["timeseries"] = (ts_params, [net, cfg.minute_bars, cfg.eod], lambda out: stage_timeseries(
            net, cfg.minute_bars, cfg.eod, out, cfg.crash_dates, cfg.window_minutes,
            cfg.window_statistic, cfg.top_n, cfg.trials, cfg.seed, cfg.calendar))
        c_params = {"dates": dates, "granger": cfg.granger.describe(), "seed": cfg.seed,
                    "sample_size": cfg.average_sample_size, "full": cfg.average_full,
                    "top_n": cfg.top_n, "rich_club_r": list(cfg.rich_club_r), "session": cfg.session}
        plan["causality"] = (c_params, [net, cfg.minute_bars, cfg.eod], lambda out: stage_causality(
            net, cfg.minute_bars, cfg.eod, out, cfg.crash_dates, cfg.granger, cfg.average_sample_size,
            cfg.average_full, cfg.seed, cfg.workers, cfg.top_n, cfg.rich_club_r, cfg.calendar))
    return plan


def _stage_key(stage: str, params: dict, files: list[Path]) -> str:
    payload = {"stage": stage, "version": __version__, "params": params,
               "inputs": [sha256_file(p) for p in files]}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _artifacts_intact(root: Path, rec: StageRecord) -> bool:
    for rel, digest in rec.artifacts.items():
        p = root / rel
        if not p.is_file() or sha256_file(p) != digest:
            return False
    return bool(rec.artifacts)


def run(config: str | Path | RunConfig) -> RunManifest:
    """Run every stage, reusing those whose key and artifacts are unchanged."""
    cfg = config if isinstance(config, RunConfig) else load_config(config)
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    prev = None
    if (root / MANIFEST).is_file():
        try:
            prev = RunManifest.load(root / MANIFEST)
        except (ValueError, KeyError, TypeError):
            logger.warning("previous manifest unreadable; recomputing everything")
    manifest = RunManifest(cfg.hash(), __version__, str(root), {})
    failure = None
    for stage, spec in _plan(cfg, root).items():
        if spec is None:
            manifest.stages[stage] = StageRecord("skipped", message="no minute bars or crash dates")
            continue
        if failure is not None:
            manifest.stages[stage] = StageRecord("not run", message=f"{failure} failed")
            continue
        params, files, fn = spec
        missing = [str(p) for p in files if not p.is_file()]
        if missing:
            failure = stage
            manifest.stages[stage] = StageRecord("failed", message=f"missing input: {missing[0]}")
            continue
        key = _stage_key(stage, params, files)
        old = prev.stages.get(stage) if prev else None
        if old and old.status in ("completed", "cached") and old.key == key and _artifacts_intact(root, old):
            manifest.stages[stage] = StageRecord("cached", key, dict(old.artifacts))
            logger.info("%s: cached", stage)
            continue
        out = root / stage
        if out.exists():
            shutil.rmtree(out)
        out.mkdir(parents=True)
        t0 = time.perf_counter()
        try:
            fn(out)
        except Exception as exc:  # any stage error halts the run
            logger.error("%s failed: %s", stage, exc)
            for p in sorted(out.iterdir()):
                p.rename(p.with_name(p.name + ".partial"))
            failure = stage
            manifest.stages[stage] = StageRecord("failed", key, {}, time.perf_counter() - t0,
                                                 f"{type(exc).__name__}: {exc}")
            continue
        arts = {f"{stage}/{p.name}": sha256_file(p) for p in sorted(out.iterdir())}
        manifest.stages[stage] = StageRecord("completed", key, arts, round(time.perf_counter() - t0, 3))
        logger.info("%s: completed in %.2fs", stage, time.perf_counter() - t0)
    (root / MANIFEST).write_text(manifest.to_json(), encoding="utf-8")
    if failure is not None:
        raise StageError(f"stage {failure!r} failed: {manifest.stages[failure].message}")
    return manifest


# ------------------------------------------------------------------- report

REPORT_FILES = {
    "table2_network_stats.csv": ("metrics", "topology summary of the filtered network"),
    "table3_paired_ttests.csv": ("herding", "adjacent-group paired one-tailed t tests"),
    "table5_hub_granger.csv": ("causality", "hub -> successor rejection ratios and average level"),
    "tableA1_group_shares.csv": ("metrics", "out-degree group shares of degree, strength, value, count"),
    "tableA2A3_composition.csv": ("metrics", "sector and style composition by out-degree group"),
    "tableA5_top_institutions.csv": ("herding", "institutions investing most in the top group"),
    "fig3_herding_matrix.csv": ("herding", "institution x group holding matrices"),
    "fig4_group_mean_changes.csv": ("timeseries", "windowed mean change per group with limit-down counts"),
    "fig5_hub_successor_scatter.csv": ("timeseries", "hub vs successor changes, empirical and null"),
    "fig6_weight_bin_ratios.csv": ("causality", "rejection ratio per edge-weight bin"),
    "figA1A2_degree_strength.csv": ("metrics", "per-node degree, strength and degree CDF"),
    "figA3_entropy_loss.csv": ("herding", "portfolio entropy against crash-day absolute loss"),
    "figA5_filter_sweep.csv": ("network", "weight quantile, ws ratio and largest WCC per k"),
    "figA6_rich_club.csv": ("metrics", "rich-club density, with Granger density when available"),
}


def _table2(root: Path) -> pd.DataFrame:
    s = json.loads((root / "metrics" / "stats.json").read_text())
    keys = ["snapshot_date", "filter_k", "density", "node_count", "edge_count", "avg_degree",
            "in_assort", "out_assort", "weight_mean", "weight_std", "weight_sum", "n_scc", "n_wcc",
            "max_scc_size", "max_wcc_size", "zero_out_degree"]
    row = {k: s.get(k) for k in keys}
    row["thresholds"] = "/".join(str(t) for t in s["thresholds"])
    return pd.DataFrame([row])


def report(target: str | Path) -> Path:
    """Assemble the report bundle from a run directory (or its manifest file)."""
    target = Path(target)
    root = target.parent if target.is_file() else target
    manifest = RunManifest.load(root / MANIFEST)
    done = {k for k, v in manifest.stages.items() if v.status in ("completed", "cached")}
    if not {"ingest", "network", "metrics", "herding"} <= done:
        raise StageError("report needs a run whose ingest/network/metrics/herding stages completed")
    out = root / "report"
    if out.exists():
        shutil.rmtree(out)
    out.mkdir()
    causality = "causality" in done
    header = []
    if causality:
        header = [l[2:].rstrip("\n") for l in (root / "causality" / "hub_ratios.csv").open()
                  if l.startswith("# ")]

    _write_csv(_table2(root), out / "table2_network_stats.csv")
    shutil.copyfile(root / "herding" / "ttests.csv", out / "table3_paired_ttests.csv")
    shutil.copyfile(root / "metrics" / "group_shares.csv", out / "tableA1_group_shares.csv")
    shutil.copyfile(root / "metrics" / "composition.csv", out / "tableA2A3_composition.csv")
    shutil.copyfile(root / "herding" / "top_institutions.csv", out / "tableA5_top_institutions.csv")
    shutil.copyfile(root / "herding" / "herding_matrix.csv", out / "fig3_herding_matrix.csv")
    shutil.copyfile(root / "metrics" / "degree_strength.csv", out / "figA1A2_degree_strength.csv")
    shutil.copyfile(root / "herding" / "entropy_loss.csv", out / "figA3_entropy_loss.csv")
    shutil.copyfile(root / "network" / "filter_sweep.csv", out / "figA5_filter_sweep.csv")

    rc = _read_csv(root / "metrics" / "rich_club.csv")
    if causality:
        g = _read_csv(root / "causality" / "rich_club_granger.csv")
        if not g.empty:
            wide = g.pivot(index="r", columns="date", values="granger_density")
            wide.columns = [f"granger_density_{c}" for c in wide.columns]
            rc = rc.merge(wide.reset_index(), on="r", how="left")
    _write_csv(rc, out / "figA6_rich_club.csv", header)

    omitted = {}
    if "timeseries" in done:
        shutil.copyfile(root / "timeseries" / "group_means.csv", out / "fig4_group_mean_changes.csv")
        sc = _read_csv(root / "timeseries" / "scatter.csv")
        gaps = _read_csv(root / "timeseries" / "null_gaps.csv")
        sc = sc.merge(gaps[["date", "experiment", "gap_mean", "gap_se"]], on=["date", "experiment"],
                      how="left")
        _write_csv(sc, out / "fig5_hub_successor_scatter.csv")
    else:
        for name in ("fig4_group_mean_changes.csv", "fig5_hub_successor_scatter.csv"):
            omitted[name] = f"timeseries stage {manifest.stages.get('timeseries', StageRecord('absent')).status}"
    if causality:
        hubs = _read_csv(root / "causality" / "hub_ratios.csv")
        avg = _read_csv(root / "causality" / "average_level.csv")
        hubs["std_error"] = np.nan
        avg_rows = pd.DataFrame({"date": avg["date"], "hub": "average level", "out_degree": np.nan,
                                 "tested": avg["tested"], "rejected": np.nan, "skipped": avg["skipped"],
                                 "ratio": avg["ratio"], "std_error": avg["std_error"]})
        table5 = pd.concat([hubs, avg_rows], ignore_index=True).sort_values("date", kind="stable")
        table5 = table5.astype({"out_degree": "Int64", "rejected": "Int64"})
        _write_csv(table5, out / "table5_hub_granger.csv", header)
        shutil.copyfile(root / "causality" / "weight_bins.csv", out / "fig6_weight_bin_ratios.csv")
    else:
        for name in ("table5_hub_granger.csv", "fig6_weight_bin_ratios.csv"):
            omitted[name] = f"causality stage {manifest.stages.get('causality', StageRecord('absent')).status}"

    files = sorted(p.name for p in out.iterdir())
    index = {
        "config_hash": manifest.config_hash,
        "tool_version": manifest.tool_version,
        "granger": header[0] if header else None,
        "files": {name: {"source_stage": REPORT_FILES[name][0], "content": REPORT_FILES[name][1],
                         "sha256": sha256_file(out / name)} for name in files},
        "omitted": omitted,
    }
    _write_json(index, out / "index.json")
    return out
