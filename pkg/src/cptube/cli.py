"""Command-line entry point.

Subcommands: ``run`` (one configured run, logs to an output directory),
``verify`` (named property suite, JSON report), ``sweep`` (configuration
grid, aggregated CSV), ``pretrain`` (fit a residual prior from a logged
adaptation-off run).  Exit codes: 0 success, 1 property/assertion failure,
2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, CptubeError
from .harness import RunConfig, run_episode, sweep
from .verify import SUITES, run_suite


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cptube")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the calibrated control loop")
    run_p.add_argument("--config", required=True, help="JSON run configuration")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--episodes", type=int, default=None)
    run_p.add_argument("--no-adapt", action="store_true", help="freeze the model at its prior")
    run_p.add_argument("--out", default=None, help="output directory for logs and metrics")
    run_p.add_argument("--dump-residuals", action="store_true")

    verify_p = sub.add_parser("verify", help="run a named verification suite")
    verify_p.add_argument("--suite", required=True, choices=sorted(SUITES))
    verify_p.add_argument("--out", default=None, help="write the JSON report here as well")

    sweep_p = sub.add_parser("sweep", help="run a configuration grid")
    sweep_p.add_argument("--config", required=True, help="base JSON run configuration")
    sweep_p.add_argument("--grid", required=True, help="JSON grid file")
    sweep_p.add_argument("--out", default="sweep.csv")
    sweep_p.add_argument("--workers", type=int, default=1)

    pre_p = sub.add_parser("pretrain", help="fit the residual prior on logged data")
    pre_p.add_argument("--config", required=True)
    pre_p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    pre_p.add_argument("--seed", type=int, default=None)
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    config = RunConfig.from_file(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.episodes is not None:
        config = replace(config, episodes=args.episodes)
    if args.no_adapt:
        config = replace(config, adaptation=False)
    metrics = run_episode(config, out_dir=args.out, dump_residuals=args.dump_residuals)
    print(json.dumps(metrics.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_verify(args: argparse.Namespace) -> int:
    report = run_suite(args.suite)
    payload = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    print(payload)
    if args.out:
        Path(args.out).write_text(payload + "\n")
    return 0 if report.passed else 1


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = RunConfig.from_file(args.config)
    try:
        grid = json.loads(Path(args.grid).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read grid {args.grid}: {exc}") from exc
    results = sweep(config, grid, args.out, workers=args.workers)
    failed = [r for r in results if r["status"] != "ok"]
    print(f"{len(results) - len(failed)}/{len(results)} cells ok -> {args.out}")
    return 0


def _cmd_pretrain(args: argparse.Namespace) -> int:
    from .harness import pretrain_prior
    from .model import save_checkpoint

    config = RunConfig.from_file(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    fitted = pretrain_prior(config)
    save_checkpoint(args.out, fitted)
    print(f"prior fitted from a logged adaptation-off run -> {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "verify": _cmd_verify,
        "sweep": _cmd_sweep,
        "pretrain": _cmd_pretrain,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CptubeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
