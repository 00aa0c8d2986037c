"""Command-line entry point: ``stocknet <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from datetime import date
from pathlib import Path

from . import __version__
from .causality import GrangerConfig
from .ingest import SessionCalendar, aggregate_by_manager, parse_holdings, write_aggregated
from .pipeline import (ConfigError, StageError, load_config, report, run, stage_causality,
                       stage_herding, stage_metrics, stage_network, stage_timeseries, validate)
from .synthetic import make_market, write_market
from .timeseries import CRASH_DATES

logger = logging.getLogger("stocknet")


def _dates(text: str) -> list[date]:
    return [date.fromisoformat(p.strip()) for p in text.split(",") if p.strip()]


def _aggregate(holdings: Path, tmp: Path, snapshot: date | None) -> Path:
    """Parse raw fund-level holdings into an aggregated file under ``tmp``."""
    parsed = parse_holdings(holdings)
    records = parsed.records
    if snapshot is not None:
        records = [r for r in records if r.as_of_date == snapshot]
    path = tmp / "holdings_aggregated.csv"
    write_aggregated(aggregate_by_manager(records), path)
    logger.info("holdings: %d accepted, %d rejected", parsed.accepted, parsed.rejected)
    return path


def cmd_validate(args) -> int:
    findings = validate(args.config)
    for f in findings:
        print(f)
    errors = sum(f.level == "error" for f in findings)
    print(f"{errors} error(s), {len(findings) - errors} warning(s)")
    return 1 if errors else 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.workers:
        cfg.workers = args.workers
    manifest = run(cfg)
    for stage, status in manifest.statuses().items():
        print(f"{stage:<11} {status}")
    if not args.no_report:
        print(f"report: {report(cfg.output_dir)}")
    return 0


def cmd_report(args) -> int:
    target = Path(args.target)
    if target.suffix == ".cfg" or (target.is_file() and target.name != "manifest.json"):
        target = load_config(target).output_dir
    out = report(target)
    index = json.loads((out / "index.json").read_text())
    print(f"{len(index['files'])} report files in {out}")
    for name, why in index["omitted"].items():
        print(f"omitted {name}: {why}")
    return 0


def cmd_network(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        agg = _aggregate(Path(args.holdings), Path(tmp), args.snapshot_date)
        stage_network(agg, Path(tmp), args.k, [] if args.no_sweep else [round(0.05 * i, 2) for i in range(20)])
        (Path(tmp) / "network.net").replace(out)
        if args.sweep_out and not args.no_sweep:
            (Path(tmp) / "filter_sweep.csv").replace(args.sweep_out)
    print(f"network written to {out}")
    return 0


def cmd_metrics(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stage_metrics(Path(args.network), out, Path(args.labels) if args.labels else None,
                  [int(r) for r in args.rich_club_r.split(",")])
    print(f"metrics written to {out}")
    return 0


def cmd_herding(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        agg = _aggregate(Path(args.holdings), Path(tmp), args.snapshot_date)
        stage_herding(agg, Path(args.network), out, Path(args.eod) if args.eod else None,
                      _dates(args.dates) if args.dates else [])
    print(f"herding tables written to {out}")
    return 0


def cmd_timeseries(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stage_timeseries(Path(args.network), Path(args.bars), Path(args.eod), out, _dates(args.dates),
                     args.window_minutes, args.statistic, args.top_n, args.trials, args.seed,
                     SessionCalendar.parse(args.session))
    print(f"timeseries outputs written to {out}")
    return 0


def cmd_causality(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = GrangerConfig(alpha=args.alpha, max_lag=args.max_lag, lag_criterion=args.criterion,
                        d_max=args.dmax)
    stage_causality(Path(args.edges), Path(args.bars), Path(args.eod), out, [args.date], cfg,
                    sample_size=args.sample_size, full=args.full, seed=args.seed, workers=args.workers,
                    top_n=args.top_n, calendar=SessionCalendar.parse(args.session))
    print(f"causality outputs written to {out}")
    return 0


def cmd_synth(args) -> int:
    market = make_market(n_hubs=args.hubs, n_successors=args.successors, n_investors=args.investors,
                         seed=args.seed)
    cfg = write_market(market, args.out, missing_rate=args.missing_rate, seed=args.seed)
    print(f"synthetic inputs written; config at {cfg}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stocknet", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check a run config")
    s.add_argument("config")
    s.set_defaults(fn=cmd_validate)

    s = sub.add_parser("run", help="run the full pipeline")
    s.add_argument("config")
    s.add_argument("--workers", type=int, default=0, help="override the config's worker count")
    s.add_argument("--no-report", action="store_true")
    s.set_defaults(fn=cmd_run)

    s = sub.add_parser("report", help="assemble the report bundle of a finished run")
    s.add_argument("target", help="output directory, manifest.json or run config")
    s.set_defaults(fn=cmd_report)

    s = sub.add_parser("network", help="network construction")
    nsub = s.add_subparsers(dest="action", required=True)
    b = nsub.add_parser("build", help="project holdings and filter by weight quantile")
    b.add_argument("--holdings", required=True)
    b.add_argument("--k", type=float, default=0.95)
    b.add_argument("--snapshot-date", type=date.fromisoformat)
    b.add_argument("--out", required=True)
    b.add_argument("--sweep-out")
    b.add_argument("--no-sweep", action="store_true")
    b.set_defaults(fn=cmd_network)

    s = sub.add_parser("metrics", help="topology statistics and group reports")
    s.add_argument("--network", required=True)
    s.add_argument("--labels")
    s.add_argument("--rich-club-r", default="5,10,20,50,100")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_metrics)

    s = sub.add_parser("herding", help="herding matrices, t tests, entropy and loss")
    s.add_argument("--holdings", required=True)
    s.add_argument("--network", required=True)
    s.add_argument("--eod")
    s.add_argument("--dates", help="comma-separated crash dates")
    s.add_argument("--snapshot-date", type=date.fromisoformat)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_herding)

    s = sub.add_parser("timeseries", help="windowed changes, scatter and null experiments")
    s.add_argument("--network", required=True)
    s.add_argument("--bars", required=True)
    s.add_argument("--eod", required=True)
    s.add_argument("--dates", default=",".join(d.isoformat() for d in CRASH_DATES),
                   help="comma-separated trade dates (default: the four crash days)")
    s.add_argument("--window-minutes", type=int, default=10)
    s.add_argument("--statistic", choices=("last", "mean"), default="last")
    s.add_argument("--top-n", type=int, default=5)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--session", default="09:30-11:30,13:00-15:00")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_timeseries)

    s = sub.add_parser("causality", help="pairwise Granger tests")
    csub = s.add_subparsers(dest="action", required=True)
    c = csub.add_parser("run", help="test every network edge on one date")
    c.add_argument("--date", required=True, type=date.fromisoformat)
    c.add_argument("--edges", required=True, help="network file")
    c.add_argument("--bars", required=True)
    c.add_argument("--eod", required=True)
    c.add_argument("--alpha", type=float, default=0.05)
    c.add_argument("--max-lag", type=int, default=10)
    c.add_argument("--criterion", choices=("aic", "bic"), default="bic")
    c.add_argument("--dmax", type=int, default=1)
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--sample-size", type=int, default=100_000)
    c.add_argument("--full", action="store_true", help="average level over all ordered pairs")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--top-n", type=int, default=5)
    c.add_argument("--session", default="09:30-11:30,13:00-15:00")
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_causality)

    s = sub.add_parser("synth", help="write a synthetic market with a known lead-lag structure")
    s.add_argument("--out", required=True)
    s.add_argument("--hubs", type=int, default=5)
    s.add_argument("--successors", type=int, default=195)
    s.add_argument("--investors", type=int, default=20)
    s.add_argument("--missing-rate", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, StageError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
