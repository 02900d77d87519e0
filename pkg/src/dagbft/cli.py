"""Command-line entry point: ``run``, ``verify``, ``stats`` and ``replay``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .runner import ConfigError, LogFormatError, RunReport, SimConfig, format_stats, replay, run_simulation, stats, verify_logs


def _load_config(args) -> SimConfig:
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    for key in ("seed", "steps", "out"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    base = Path(args.config).parent if args.config else None
    return SimConfig.from_dict(data, base_dir=base)


def cmd_run(args) -> int:
    cfg = _load_config(args)
    report = run_simulation(cfg)
    summary = stats(report)
    print(format_stats(summary))
    if cfg.out:
        print(f"outputs written to {cfg.out}")
    for v in report.violations:
        print(f"VIOLATION {v}", file=sys.stderr)
    return 1 if report.violations else 0


def cmd_verify(args) -> int:
    check = verify_logs(args.logs, names=args.logs)
    if check.consistent:
        print(f"consistent: {len(args.logs)} logs")
        return 0
    for p in check.problems:
        print(p)
    if check.first_divergence is not None:
        print(f"first divergence at batch {check.first_divergence}")
    return 1


def cmd_stats(args) -> int:
    report = RunReport.from_json(Path(args.report).read_text())
    summary = stats(report)
    print(json.dumps(summary, indent=1, sort_keys=True) if args.json else format_stats(summary))
    return 1 if report.violations else 0


def cmd_replay(args) -> int:
    result = replay(args.out_dir)
    print(f"report byte-identical: {result.report_identical}")
    for name, ok in result.logs_reproduced.items():
        print(f"{name}: log {'reproduced' if ok else 'MISMATCH'}")
    return 0 if result.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dagbft", description="Simulate and check DAG-based BFT atomic broadcast.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a simulation")
    run.add_argument("--config", help="JSON configuration file (defaults apply without one)")
    run.add_argument("--seed", type=int)
    run.add_argument("--steps", type=int)
    run.add_argument("--out", help="output directory for report, logs and unit logs")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="check ordered-output logs for mutual consistency")
    ver.add_argument("logs", nargs="+", help="JSONL log files")
    ver.set_defaults(func=cmd_verify)

    st = sub.add_parser("stats", help="summarise a run report")
    st.add_argument("report", help="report.json written by run")
    st.add_argument("--json", action="store_true", help="print machine-readable JSON")
    st.set_defaults(func=cmd_stats)

    rep = sub.add_parser("replay", help="re-run a stored run and re-derive its logs")
    rep.add_argument("out_dir", help="directory written by run --out")
    rep.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, LogFormatError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
