"""Command line entry point.

Exit codes: 0 when the experiment's checks all pass, 1 when any check
fails, 2 for configuration or usage errors (argparse uses 2 as well).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from ..errors import CbolabError, ConfigError
from . import experiments
from .config import load_config

_EXPERIMENTS = (
    "simulate",
    "decay",
    "chaos",
    "laplace",
    "meanfield",
    "noise-variants",
    "concentration",
)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="path to the TOML experiment config")
    sub.add_argument("--seed", type=int, default=None, help="override monte_carlo.seed")
    sub.add_argument("--out", default=None, help="override the output directory")
    sub.add_argument(
        "--workers",
        type=int,
        default=int(os.environ.get("CBOLAB_WORKERS", "1")),
        help="worker processes for trials (default: CBOLAB_WORKERS or 1)",
    )
    sub.add_argument(
        "--strict",
        action="store_true",
        help="refuse to run when the drift does not clear the required threshold",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cbolab",
        description="Consensus-dynamics experiments with closed-form pass/fail checks",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    for name in _EXPERIMENTS:
        sub = subs.add_parser(name, help=f"run the {name.replace('-', '_')} experiment")
        _add_common(sub)

    thr = subs.add_parser("thresholds", help="print the threshold table for a config")
    thr.add_argument("--config", required=True)

    rep = subs.add_parser("report", help="summarize a finished run from its manifest")
    rep.add_argument("manifest", help="path to manifest.json")

    replay = subs.add_parser("replay", help="re-run the experiment recorded in a manifest")
    replay.add_argument("manifest", help="path to manifest.json")
    replay.add_argument("--out", required=True, help="directory for the replayed outputs")
    replay.add_argument(
        "--workers",
        type=int,
        default=int(os.environ.get("CBOLAB_WORKERS", "1")),
    )
    return parser


def _cmd_thresholds(args) -> int:
    cfg = load_config(args.config)
    rep = cfg.threshold_report()
    for key, value in sorted(rep.to_dict().items()):
        if isinstance(value, dict):
            for k2, v2 in sorted(value.items()):
                print(f"{key}.{k2} = {v2}")
        else:
            print(f"{key} = {value}")
    return 0


def _cmd_report(args) -> int:
    with open(args.manifest, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    print(f"experiment: {manifest['kind']}  (seed {manifest['seed']}, version {manifest['version']})")
    print(f"passed: {manifest['passed']}  divergences: {manifest['divergence_count']}")
    out_dir = os.path.dirname(os.path.abspath(args.manifest))
    print(f"outputs in {out_dir}:")
    for name in manifest["outputs"]:
        print(f"  {name}")
    summary_path = os.path.join(out_dir, "summary.json")
    if os.path.exists(summary_path):
        with open(summary_path, "r", encoding="utf-8") as fh:
            summary = json.load(fh)
        for check in summary["checks"]:
            status = "PASS" if check["passed"] else "FAIL"
            line = f"[{status}] {check['name']}"
            if check.get("detail"):
                line += f"  {check['detail']}"
            print(line)
        for warning in summary.get("warnings", []):
            print(f"[warn] {warning}")
    return 0


def _cmd_experiment(args, kind: str) -> int:
    cfg = load_config(args.config)
    if cfg.kind != kind:
        raise ConfigError(
            f"config declares experiment kind {cfg.kind!r} but the {kind!r} command was invoked"
        )
    cfg = cfg.with_overrides(seed=args.seed, out_dir=args.out)
    report, manifest_path = experiments.run_and_write(cfg, workers=args.workers, strict=args.strict)
    for warning in report.warnings:
        print(f"[warn] {warning}", file=sys.stderr)
    for line in report.lines():
        print(line)
    print(f"manifest: {manifest_path}")
    return 0 if report.passed else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "thresholds":
            return _cmd_thresholds(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "replay":
            report, manifest_path = experiments.replay_manifest(
                args.manifest, args.out, workers=args.workers
            )
            for line in report.lines():
                print(line)
            print(f"manifest: {manifest_path}")
            return 0 if report.passed else 1
        return _cmd_experiment(args, args.command.replace("-", "_"))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CbolabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
