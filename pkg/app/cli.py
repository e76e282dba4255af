"""``track`` command line.

Subcommands mirror the HTTP routes: ``offline``, ``online``, ``eval`` and
``synth``. Evaluation reports are printed to stdout as JSON.

Exit codes
----------
- 0: success.
- 2: unreadable input, malformed detections or an invalid configuration.
- 3: the fraction of solver runs that hit their iteration cap exceeds
  ``TRACK_UNCONVERGED_LIMIT``. Outputs are still written.
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from app.errors import PipelineStageError
from app.models.config import MatchRule, load_pipeline_config
from app.services.clear_mot import evaluate_clear_mot
from app.services.io import parse_track_file
from app.services.pipeline import PipelineResult, run_offline, run_online
from app.services.synth import SCENARIOS, generate_scenario, write_scenario
from app.settings import Settings, configure_logging

logger = logging.getLogger("app.cli")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_UNCONVERGED = 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="track", description="Graph label-propagation multi-object tracker")
    sub = parser.add_subparsers(dest="command", required=True)

    off = sub.add_parser("offline", help="track a whole detection file at once")
    off.add_argument("--dets", required=True, help="detection file")
    off.add_argument("--gt", help="ground-truth track file; enables evaluation")
    off.add_argument("--config", help="TOML pipeline configuration")
    off.add_argument("--solver", choices=["joint", "nodewise"])
    off.add_argument("--workers", type=int, help="worker threads (default TRACK_WORKERS)")
    off.add_argument("--energy-trace", help="write iter,objective CSV here")
    off.add_argument("--graph-dump", help="write graph_id,i,j,weight CSV here")
    off.add_argument("--batch-dump", help="write batch_id,node_id CSV here (parallel solver)")
    off.add_argument("--out", required=True, help="output track file")

    on = sub.add_parser("online", help="track frame by frame")
    on.add_argument("--dets", required=True)
    on.add_argument("--gt")
    on.add_argument("--config")
    on.add_argument("--window", type=int, help="observation window T_o in frames")
    on.add_argument("--workers", type=int)
    on.add_argument("--energy-trace")
    on.add_argument("--stream-out", help="write per-frame frame,node_id,track_id assignments here")
    on.add_argument("--checkpoint", help="write the final online state (.npz) here")
    on.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="CLEAR MOT scores of a track file")
    ev.add_argument("--tracks", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--match", default="iou:0.5", help="iou:<ratio> or dist:<distance>")

    syn = sub.add_parser("synth", help="write a synthetic scenario")
    syn.add_argument("--scenario", required=True, choices=SCENARIOS)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--out-dets", required=True)
    syn.add_argument("--out-gt", required=True)
    return parser


def _finish(result: PipelineResult, settings: Settings) -> int:
    if result.report is not None:
        print(result.report.model_dump_json(indent=2))
    fraction = result.stats.unconverged_fraction
    if fraction > settings.unconverged_limit:
        logger.warning(
            "%d of %d solver runs did not converge (%.1f%% > limit %.1f%%)",
            result.stats.unconverged, result.stats.solves, 100 * fraction, 100 * settings.unconverged_limit,
        )
        return EXIT_UNCONVERGED
    return EXIT_OK


def _run(args: argparse.Namespace, settings: Settings) -> int:
    if args.command == "synth":
        scenario = generate_scenario(args.scenario, args.seed)
        write_scenario(scenario, args.out_dets, args.out_gt)
        logger.info("wrote %s scenario (seed %d): %d detections", scenario.name, args.seed, len(scenario.detections))
        return EXIT_OK

    if args.command == "eval":
        rule = MatchRule.parse(args.match)
        report = evaluate_clear_mot(parse_track_file(args.tracks), parse_track_file(args.gt), rule)
        print(report.model_dump_json(indent=2))
        return EXIT_OK

    cfg = load_pipeline_config(args.config)
    workers = args.workers or settings.workers
    if args.command == "offline":
        result = run_offline(
            cfg, args.dets, args.gt,
            solver=args.solver, workers=workers, out=args.out, energy_trace=args.energy_trace,
            graph_dump=args.graph_dump, batch_dump=args.batch_dump,
        )
    else:
        result = run_online(
            cfg, args.dets, args.gt,
            window=args.window, workers=workers, out=args.out, energy_trace=args.energy_trace,
            stream_out=args.stream_out, checkpoint=args.checkpoint,
        )
    return _finish(result, settings)


def main(argv: Optional[Sequence[str]] = None, settings: Optional[Settings] = None) -> int:
    args = _parser().parse_args(argv)
    settings = settings or Settings()
    configure_logging(settings)
    try:
        return _run(args, settings)
    except PipelineStageError as exc:
        if isinstance(exc.cause, (ValueError, OSError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        raise
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
