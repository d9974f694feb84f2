"""Command line entry points: run, replay, report, gen-assets.

Exit codes: 0 on success, 1 for configuration or input validation problems,
2 for runtime anomalies (injection errors in the log, replay mismatches).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import __version__, campaign
from .errors import LogFormatError, ValidationError, WarpFaultError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="warpfault",
        description="Deterministic warp-level fault injection campaigns")
    parser.add_argument("--version", action="version",
                        version=f"warpfault {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a campaign from a config file")
    run_p.add_argument("config", type=Path, help="campaign INI file")
    run_p.add_argument("--out", type=Path, default=Path("."),
                       help="output directory (default: current)")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override [campaign] master_seed")
    run_p.add_argument("--workers", type=int, default=None,
                       help="override [campaign] workers")
    run_p.add_argument("--resume", action="store_true",
                       help="continue an interrupted run from its log")

    replay_p = sub.add_parser("replay",
                              help="recompute log records and verify them")
    replay_p.add_argument("log", type=Path, help="campaign.jsonl path")
    replay_p.add_argument("--record", type=int, default=None,
                          help="verify a single record by seq (default: all)")

    report_p = sub.add_parser("report", help="summarize a campaign log")
    report_p.add_argument("log", type=Path, help="campaign.jsonl path")
    report_p.add_argument("--format", choices=("json", "csv", "markdown"),
                          default="markdown")
    report_p.add_argument("--out", type=Path, default=None,
                          help="write to a file instead of stdout")

    assets_p = sub.add_parser("gen-assets",
                              help="write the reference network weights and "
                                   "frames as binary dumps")
    assets_p.add_argument("out_dir", type=Path)
    return parser


def _progress_printer(total_hint: int):
    step = max(1, total_hint // 20)

    def progress(done: int, total: int):
        if done == total or done % step == 0:
            print(f"\r{done}/{total} injections", end="", file=sys.stderr)
            if done == total:
                print(file=sys.stderr)

    return progress


def cmd_run(args) -> int:
    config = campaign.parse_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    if args.workers is not None:
        config = dataclasses.replace(config, workers=args.workers)
    result = campaign.run_campaign(
        config, args.out, resume=args.resume,
        progress=_progress_printer(config.total_injections))
    stats_path = Path(args.out) / "stats.json"
    stats_path.write_text(campaign.render_report(
        result.per_model, result.overall, config, "json", result.anomalies))
    print(campaign.render_report(result.per_model, result.overall, config,
                                 "markdown", result.anomalies))
    print(f"log: {result.log_path}", file=sys.stderr)
    print(f"stats: {stats_path}", file=sys.stderr)
    if result.anomalies:
        print(f"warning: {result.anomalies} injection(s) recorded anomalies",
              file=sys.stderr)
        return 2
    return 0


def cmd_replay(args) -> int:
    replayed, mismatches = campaign.replay_log(args.log, args.record)
    print(f"replayed {replayed} record(s): {len(mismatches)} mismatch(es)")
    for mm in mismatches:
        print(f"  seq {mm.seq} field {mm.field}:")
        print(f"    recorded:   {mm.recorded}")
        print(f"    recomputed: {mm.recomputed}")
    return 2 if mismatches else 0


def cmd_report(args) -> int:
    header, records = campaign.load_log(args.log)
    config = campaign.CampaignConfig.from_json(header["config"])
    per_model, overall, anomalies = campaign.stats_from_records(records)
    doc = campaign.render_report(per_model, overall, config, args.format,
                                 anomalies)
    if args.out is not None:
        args.out.write_text(doc)
        print(f"wrote {args.out}", file=sys.stderr)
    else:
        print(doc, end="")
    return 0


def cmd_gen_assets(args) -> int:
    for path in campaign.generate_assets(args.out_dir):
        print(path)
    return 0


_COMMANDS = {
    "run": cmd_run,
    "replay": cmd_replay,
    "report": cmd_report,
    "gen-assets": cmd_gen_assets,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, LogFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except WarpFaultError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
