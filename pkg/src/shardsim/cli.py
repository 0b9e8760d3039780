"""Command-line front end: ``run``, ``compare`` and ``plotdata``."""
from __future__ import annotations

import argparse
import logging
import os
import secrets
import sys

from .config import ConfigError, parse_config
from .metrics import METRICS
from .runner import MalformedReport, compare, load_report, write_plotdata, write_report
from .strategies import StrategyKind

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ABORT = 2

log = logging.getLogger("shardsim")


def _setup_logging() -> None:
    # replace any handler from an earlier call so repeated main() calls do not stack
    root = logging.getLogger("shardsim")
    for h in list(root.handlers):
        if getattr(h, "_shardsim_cli", False):
            root.removeHandler(h)
    level = os.environ.get("SHARDSIM_LOG", "").strip().upper()
    handler: logging.Handler
    if level:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root.setLevel(getattr(logging, level, logging.INFO))
    else:
        handler = logging.NullHandler()
    handler._shardsim_cli = True
    root.addHandler(handler)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed {text} is not an unsigned 64-bit integer")
    return v


def _seed_list(text: str) -> list[int]:
    return [_u64(p) for p in text.split(",") if p.strip()]


def _strategy_list(text: str) -> list[str]:
    out = [p.strip() for p in text.split(",") if p.strip()]
    valid = {s.value for s in StrategyKind}
    for s in out:
        if s not in valid:
            raise argparse.ArgumentTypeError(f"unknown strategy {s!r}")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shardsim", description="Sharding strategy simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one simulation and write a report")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=_u64)
    run.add_argument("--out", required=True)
    run.add_argument("--quiet", action="store_true")

    cmp_ = sub.add_parser("compare", help="run strategies x seeds and write a normalized table")
    cmp_.add_argument("--config", required=True)
    cmp_.add_argument("--seeds", type=_seed_list)
    cmp_.add_argument("--seed", type=_u64)
    cmp_.add_argument("--strategies", type=_strategy_list,
                      default=[s.value for s in StrategyKind])
    cmp_.add_argument("--out", required=True)
    cmp_.add_argument("--quiet", action="store_true")

    plot = sub.add_parser("plotdata", help="flatten a report's bucket series to CSV")
    plot.add_argument("report")
    plot.add_argument("--out", required=True)
    plot.add_argument("--quiet", action="store_true")
    return p


def _pick_seeds(args, config) -> list[int]:
    if getattr(args, "seeds", None):
        return args.seeds
    if args.seed is not None:
        return [args.seed]
    if config.seed is not None:
        return [config.seed]
    seed = secrets.randbits(64)
    log.info("no seed given; drew %d from entropy", seed)
    return [seed]


def _table(report: dict, key: str) -> str:
    table = report[key]
    width = max(len(s) for s in table)
    lines = [" ".join([" " * width] + [f"{m:>15}" for m in METRICS])]
    for s, row in table.items():
        lines.append(" ".join([f"{s:<{width}}"] + [f"{row[m]:>15.4f}" for m in METRICS]))
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plotdata":
            rows = write_plotdata(load_report(args.report), args.out)
            if not args.quiet:
                print(f"wrote {rows} rows to {args.out}")
            return EXIT_OK
        config = parse_config(args.config)
    except (ConfigError, FileNotFoundError, MalformedReport) as exc:
        print(f"shardsim: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    seeds = _pick_seeds(args, config)
    if args.command == "run":
        strategies = [config.strategy]
        seeds = seeds[:1]
    else:
        strategies = args.strategies
        if len(strategies) < 2:
            print("shardsim: compare needs at least two strategies", file=sys.stderr)
            return EXIT_CONFIG
    try:
        report = compare(config, strategies, seeds,
                         progress=lambda s, seed: log.info("running %s seed=%d", s, seed))
        write_report(report, args.out)
    except Exception as exc:  # any abort inside a run is reported as one line
        log.debug("run aborted", exc_info=True)
        print(f"shardsim: run aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORT
    if not args.quiet:
        print("raw scores (mean over seeds)")
        print(_table(report, "raw"))
        if len(strategies) > 1 and report.get("normalized"):
            print("normalized by column maximum")
            print(_table(report, "normalized"))
        print(f"report written to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
