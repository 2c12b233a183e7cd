#!/usr/bin/env python3
"""
GM Tracker - graph-matching multi-object tracking from the command line.

Tracks detections with a differentiable graph-matching associator, trains the
matching network, evaluates results against ground truth, checks gradients
and runs the matcher ablation on synthetic scenarios.

Usage:
    python app.py track --det det.txt --feat feat.bin --out res.txt
    python app.py train --scenario data/seq1 --out model.gmt
    python app.py eval --gt gt.txt --res res.txt
    python app.py gradcheck --seed 7
    python app.py synth --name crossing_2 --out data/crossing_2
    python app.py bench --suite standard

Every subcommand takes --config, --set section.key=value, --seed and
--log-level. Failures print one line
``error kind=<Kind> exit=<code> message=<json>`` on stderr.
Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

import sys
import os
import argparse
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import orjson

# Make the src package importable when run from anywhere
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.config.settings import ConfigManager
from src.controllers.tracker_controller import GMTracker
from src.dataio import (
    pair_detections, parse_detections, read_features, read_ground_truth, read_scenario,
    read_warps, records_to_sequence, write_results, write_scenario,
)
from src.evaluation import (
    aggregate, appearance_sweep_spec, bench, certify_disambiguation, delta_sweep, evaluate, format_bench,
    format_key_value, format_summary, format_table, generate_scenario, long_occlusion_suite,
    reports_to_json, sigma_sweep, standard_suite,
)
from src.models.data_models import GtSequence
from src.models.errors import EXIT_NUMERICAL, EXIT_USAGE, ConfigError, GMTrackerError
from src.network import MatchingNetwork, Trainer, build_training_samples, load_checkpoint, save_checkpoint
from src.network import run_gradcheck
from src.utils.logging_config import get_logger, initialize_logging

VERSION = "1.0.0"
Frames = Dict[int, Tuple[np.ndarray, np.ndarray]]


class UsageError(GMTrackerError):
    exit_code = EXIT_USAGE


class CliParser(argparse.ArgumentParser):
    """argparse with usage errors routed through the one-line error contract."""

    def error(self, message):
        raise UsageError(message)


def error_line(error: GMTrackerError) -> str:
    kind = "Usage" if isinstance(error, UsageError) else error.kind
    return f"error kind={kind} exit={error.exit_code} message={orjson.dumps(error.message).decode()}"


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, help='Flat section.key = value configuration file')
    common.add_argument('--set', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help='Override one configuration value (repeatable)')
    common.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'],
                        help='Logging level (default: logging.level or GMT_LOG_LEVEL)')

    parser = CliParser(
        description="GM Tracker - graph-matching multi-object tracking",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python app.py track --det det.txt --feat feat.bin --out res.txt
  python app.py eval --gt gt.txt --res res.txt --format kv
  python app.py bench --suite standard --json bench.json
        """
    )
    parser.add_argument('--version', action='version', version=f'GM Tracker {VERSION}')
    sub = parser.add_subparsers(dest='command', parser_class=CliParser)

    def subcommand(name: str, help_text: str, seed_help: str = 'Random seed (overrides run.seed)'):
        command = sub.add_parser(name, parents=[common], help=help_text)
        command.add_argument('--seed', type=int, help=seed_help)
        return command

    track = subcommand('track', 'Track a detection file',
                       'Accepted for a uniform command line; tracking is deterministic and ignores it')
    track.add_argument('--det', help='Detection file (run.detections)')
    track.add_argument('--feat', help='Feature file (run.features)')
    track.add_argument('--out', help='Result file (run.output)')
    track.add_argument('--checkpoint', help='Trained network (run.checkpoint)')
    track.add_argument('--warp', help='Per-frame camera warp file (run.warp)')

    train = subcommand('train', 'Train the matching network')
    train.add_argument('--scenario', action='append', default=[],
                       help='Scenario directory with gt.txt, det.txt and features (repeatable)')
    train.add_argument('--suite', choices=['standard'], help='Train on the generated standard suite instead')
    train.add_argument('--epochs', type=int, help='Epochs (train.epochs)')
    train.add_argument('--out', help='Checkpoint file (run.checkpoint)')

    ev = subcommand('eval', 'Score a result file against ground truth')
    ev.add_argument('--gt', help='Ground-truth file (run.ground_truth)')
    ev.add_argument('--res', help='Result file (run.output)')
    ev.add_argument('--iou', type=float, default=0.5, help='IoU threshold (default: 0.5)')
    ev.add_argument('--format', choices=['text', 'kv', 'json'], default='text')

    grad = subcommand('gradcheck', 'Finite-difference gradient checks')
    grad.add_argument('--threshold', type=float, default=1e-3, help='Max relative error (default: 1e-3)')

    synth = subcommand('synth', 'Write a generated scenario to disk')
    synth.add_argument('--name', default='crossing_2', help='Scenario from the standard suite')
    synth.add_argument('--out', required=True, help='Output directory')

    bn = subcommand('bench', 'Graph matching vs Hungarian on a scenario suite')
    bn.add_argument('--suite', choices=['standard', 'long', 'certify', 'sweep'], default='standard')
    bn.add_argument('--checkpoint', help='Trained network for the graph matcher')
    bn.add_argument('--json', help='Also write the reports as JSON')

    args = parser.parse_args(argv)
    if not args.command:
        raise UsageError("a subcommand is required: track, train, eval, gradcheck, synth or bench")
    return args


def load_settings(args: argparse.Namespace) -> ConfigManager:
    """Config file, then environment, then --set, then dedicated flags."""
    config = ConfigManager(args.config)
    config.apply_overrides(args.set)
    if args.seed is not None:
        config.run.seed = args.seed
    if args.log_level:
        config.logging.level = args.log_level
    config.validate()
    return config


def pick(value: Optional[str], fallback: str, flag: str) -> str:
    chosen = value or fallback
    if not chosen:
        raise UsageError(f"{flag} is required")
    return chosen


def load_network(path: str, dim: int, config: ConfigManager) -> Optional[MatchingNetwork]:
    if path:
        return load_checkpoint(path)
    if config.tracker.matcher == "graph":
        return MatchingNetwork.identity(dim, config.gcn)
    return None


# Subcommands -------------------------------------------------------------------

def cmd_track(args, config: ConfigManager) -> int:
    logger = get_logger("app.track")
    det_path = pick(args.det, config.run.detections, "--det")
    feat_path = pick(args.feat, config.run.features, "--feat")
    out_path = pick(args.out, config.run.output, "--out")
    frames = pair_detections(parse_detections(det_path), read_features(feat_path, config.run.feature_format))
    dim = next((f.shape[1] for _, f in frames.values() if f.ndim == 2), 0)
    warp_path = args.warp or config.run.warp
    warps = read_warps(warp_path) if warp_path else {}

    network = load_network(args.checkpoint or config.run.checkpoint, dim, config)
    tracker = GMTracker(config.tracker, network, config.matching)
    records = tracker.run(frames, warps)
    write_results(records, out_path)

    if config.tracker.interpolate:
        synthetic = [(obs.frame, t.id) for t in tracker.finalized_tracks() for obs in t.history if obs.synthetic]
        sidecar = f"{out_path}.interpolated"
        Path(sidecar).write_text("".join(f"{f},{i}\n" for f, i in sorted(synthetic)), encoding="utf-8")
        logger.info(f"{len(synthetic)} interpolated boxes listed in {sidecar}")
    print(f"tracks={len(tracker.tracks)} records={len(records)} out={out_path}")
    return 0


def _training_sequences(args, config: ConfigManager) -> List[Tuple[GtSequence, Frames]]:
    if args.scenario:
        return [read_scenario(directory) for directory in args.scenario]
    if args.suite == "standard":
        scenarios = [generate_scenario(spec) for spec in standard_suite(config.run.seed)]
        return [(s.gt, s.frames) for s in scenarios]
    raise UsageError("train needs --scenario or --suite")


def cmd_train(args, config: ConfigManager) -> int:
    out_path = pick(args.out, config.run.checkpoint, "--out")
    sequences = _training_sequences(args, config)
    samples = [s for gt, frames in sequences for s in build_training_samples(frames, gt, config.train.max_history)]
    if not samples:
        raise UsageError("no training samples: sequences need at least two labeled frames")
    dims = {s.det_features.shape[1] for s in samples}
    if len(dims) != 1:
        raise ConfigError(f"training sequences disagree on feature width: {sorted(dims)}")

    network = MatchingNetwork.create(dims.pop(), config.train.hidden_width, config.train.output_width,
                                     seed=config.run.seed, activation=config.train.activation,
                                     gcn_config=config.gcn)
    trainer = Trainer(network, config.train, replace(config.matching, tol=config.train.qp_tol))
    losses = trainer.fit(samples, args.epochs)
    save_checkpoint(trainer.network, out_path)
    final = losses[-1] if losses else float("nan")
    print(f"samples={len(samples)} steps={len(losses)} skipped={trainer.skipped} final_loss={final:.6f} out={out_path}")
    return 0


def cmd_eval(args, config: ConfigManager) -> int:
    gt = read_ground_truth(pick(args.gt, config.run.ground_truth, "--gt"))
    hyp = records_to_sequence(parse_detections(pick(args.res, config.run.output, "--res")),
                              gt.first_frame, gt.last_frame)
    report = evaluate(gt, hyp, Path(args.gt or config.run.ground_truth).parent.name or "sequence", args.iou)
    if args.format == "kv":
        print(format_key_value(report))
    elif args.format == "json":
        print(reports_to_json([report]).decode())
    else:
        print(format_table([report]))
        print(format_summary(report))
    return 0


def cmd_gradcheck(args, config: ConfigManager) -> int:
    report = run_gradcheck(config.run.seed, args.threshold)
    for line in report.lines():
        print(line)
    return 0 if report.passed else EXIT_NUMERICAL


def cmd_synth(args, config: ConfigManager) -> int:
    specs = {spec.name: spec for spec in standard_suite(config.run.seed) + long_occlusion_suite(seed=config.run.seed)}
    if args.name not in specs:
        raise UsageError(f"unknown scenario {args.name!r}; choose from {', '.join(sorted(specs))}")
    scenario = generate_scenario(specs[args.name])
    directory = write_scenario(scenario, args.out, config.run.feature_format)
    print(f"scenario={args.name} frames={scenario.spec.num_frames} boxes={scenario.gt.num_boxes} out={directory}")
    return 0


SWEEP_SIGMAS = (0.3, 0.5, 0.6, 0.7, 0.8, 0.9)
SWEEP_DELTAS = (10, 30, 60, 100)


def sweep(config: ConfigManager, network: Optional[MatchingNetwork]) -> list:
    """Appearance-threshold curve on a noisy jittered object, max-age curve on the long-occlusion suite."""
    seed = config.run.seed
    reports = []
    for sigma, report, n_tracks in sigma_sweep(appearance_sweep_spec(seed), SWEEP_SIGMAS, config.tracker, network):
        print(f"sigma={sigma:.2f} {format_summary(report)} tracks={n_tracks}")
        reports.append(replace(report, name=f"sigma={sigma:.2f}"))
    for delta, per_scenario in delta_sweep(long_occlusion_suite(seed=seed), SWEEP_DELTAS, config.tracker, network):
        overall = aggregate(per_scenario, f"delta={delta}")
        print(f"delta={delta} {format_summary(overall)}")
        reports.append(overall)
    return reports


def cmd_bench(args, config: ConfigManager) -> int:
    logger = get_logger("app.bench")
    network = load_checkpoint(args.checkpoint) if args.checkpoint else None
    if args.suite == "certify":
        certificate = certify_disambiguation(config=config.tracker, network=network)
        reports = [replace(certificate.graph, name=f"{certificate.spec.name}/graph"),
                   replace(certificate.baseline, name=f"{certificate.spec.name}/hungarian")]
        print(format_table(reports))
    elif args.suite == "sweep":
        reports = sweep(config, network)
    else:
        specs = standard_suite(config.run.seed) if args.suite == "standard" else long_occlusion_suite(seed=config.run.seed)
        rows = bench(specs, config.tracker, network, config.matching)
        reports = [r.report for r in rows]
        print(format_bench(rows))
        for matcher in ("graph", "hungarian"):
            print(format_summary(aggregate([r.report for r in rows if r.matcher == matcher], matcher)),
                  f"matcher={matcher}")
    if args.json:
        Path(args.json).write_bytes(reports_to_json(reports))
        logger.info(f"Bench reports written to {args.json}")
    return 0


COMMANDS = {
    'track': cmd_track,
    'train': cmd_train,
    'eval': cmd_eval,
    'gradcheck': cmd_gradcheck,
    'synth': cmd_synth,
    'bench': cmd_bench,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point; returns the exit status."""
    try:
        args = parse_arguments(argv)
        config = load_settings(args)
        initialize_logging(config)
        get_logger(__name__).debug(f"Running {args.command} with seed {config.run.seed}")
        return COMMANDS[args.command](args, config)
    except GMTrackerError as e:
        print(error_line(e), file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error kind=DataIoError exit=2 message={orjson.dumps(str(e)).decode()}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
