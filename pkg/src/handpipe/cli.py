"""handpipe command line: simulate, track, gesture, eval, bench and render.

Exit codes: 0 success, 2 malformed input, 3 bad config or graph, 4 data mismatch.
Set HANDPIPE_LOG (e.g. DEBUG) to change the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import io
from .config import ConfigError, PipelineConfig
from .gesture import GestureTable, recognize
from .graph import GraphParseError, GraphRunError, GraphValidationError, check_graph
from .metrics import bench_pipeline, evaluate
from .pipeline import load_graph, track_with_graph
from .render import render_tracks
from .simulator import ScriptError, SequenceScript, run_script, steady_hand_script

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_MISMATCH = 4

log = logging.getLogger("handpipe")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load_script(path: str, seed: int | None) -> SequenceScript:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read script: {exc}") from None
    if not text.strip():
        return SequenceScript(0, seed=seed or 0)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_INPUT, f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return SequenceScript.from_dict(data, seed=seed)
    except ScriptError as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc}") from None


def _load_config(args) -> PipelineConfig:
    try:
        config = PipelineConfig.load(args.config)
        changes = {}
        if getattr(args, "seed", None) is not None:
            changes["seed"] = args.seed
        if getattr(args, "tier", None):
            changes["tier"] = args.tier
        if getattr(args, "max_hands", None) is not None:
            changes["max_hands"] = args.max_hands
        if getattr(args, "no_gating", False):
            changes["gating"] = False
        if getattr(args, "graph", None):
            changes["graph_path"] = args.graph
        return config.with_(**changes) if changes else config
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"config error: {exc}") from None


def _load_graph(config: PipelineConfig):
    try:
        spec = load_graph(config)
        check_graph(spec)
        return spec
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read graph: {exc}") from None
    except GraphValidationError as exc:
        lines = [f"graph validation failed ({len(exc.diagnostics)} problem(s)):"]
        lines += [f"  [{d.kind}] {d.message}" for d in exc.diagnostics]
        raise CliError(EXIT_CONFIG, "\n".join(lines)) from None
    except (GraphParseError, ConfigError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"graph error: {exc}") from None


def _read(reader, path):
    try:
        return reader(path)
    except io.FormatError as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc}") from None


def _gesture_table(config: PipelineConfig) -> GestureTable:
    try:
        return GestureTable.from_rows(config.gesture_table) if config.gesture_table else GestureTable()
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"bad gesture table: {exc}") from None


def track_records(config: PipelineConfig, scenes, max_workers: int = 4, scheduler_seed=None):
    """Run the configured graph and return quantized, gesture-labelled records."""
    spec = _load_graph(config)
    table = _gesture_table(config)
    reports, _ = track_with_graph(scenes, spec, max_workers=max_workers, scheduler_seed=scheduler_seed)
    return [io.track_record(r, table) for r in reports]


def cmd_simulate(args) -> int:
    script = _load_script(args.script, args.seed)
    n = io.write_scenes(args.out, run_script(script))
    log.info("wrote %d scenes to %s", n, args.out)
    return EXIT_OK


def cmd_track(args) -> int:
    config = _load_config(args)
    scenes = _read(io.read_scenes, getattr(args, "in"))
    try:
        records = track_records(config, scenes, args.workers)
    except GraphRunError as exc:
        code = EXIT_MISMATCH if isinstance(exc.cause, KeyError) else 1
        raise CliError(code, str(exc)) from None
    io.write_tracks(args.out, records)
    log.info("tracked %d frames, detector ran on %d", len(records), sum(r.detector_ran for r in records))
    return EXIT_OK


def cmd_gesture(args) -> int:
    config = _load_config(args)
    table = _gesture_table(config)
    tracks = _read(io.read_tracks, getattr(args, "in"))
    relabelled = [
        replace(rec, hands=tuple(replace(h, gesture=recognize(h.landmarks, table)) for h in rec.hands))
        for rec in tracks
    ]
    io.write_tracks(args.out, relabelled)
    return EXIT_OK


def cmd_eval(args) -> int:
    tracks = _read(io.read_tracks, getattr(args, "in"))
    scenes = _read(io.read_scenes, args.scenes)
    try:
        report = evaluate(tracks, scenes, args.iou)
    except ValueError as exc:
        raise CliError(EXIT_MISMATCH, f"{exc} ({len(tracks)} track frames, {len(scenes)} scenes)") from None
    report = {"schema": io.SCHEMA, "kind": "eval", **io.round_floats(report)}
    io.write_report(args.out or sys.stdout, report)
    return EXIT_OK


def cmd_bench(args) -> int:
    config = _load_config(args)
    if getattr(args, "in"):
        scenes = _read(io.read_scenes, getattr(args, "in"))
    elif args.script:
        scenes = list(run_script(_load_script(args.script, args.seed)))
    else:
        scenes = list(run_script(steady_hand_script(args.frames, seed=config.seed)))
    _load_graph(config)
    report = bench_pipeline(config, scenes, args.repetitions)
    report = {"schema": io.SCHEMA, "kind": "bench", **io.round_floats(report)}
    io.write_report(args.out or sys.stdout, report)
    return EXIT_OK


def cmd_render(args) -> int:
    tracks = _read(io.read_tracks, getattr(args, "in"))
    paths = render_tracks(tracks, args.out, args.width, args.height)
    log.info("rendered %d frames to %s", len(paths), args.out)
    return EXIT_OK


def _pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config (JSON)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--graph", help="graph file (default: the shipped hand_tracking.graph)")
    p.add_argument("--tier", choices=["light", "full", "heavy"], help="landmark backend tier")
    p.add_argument("--max-hands", type=int, dest="max_hands")
    p.add_argument("--no-gating", action="store_true", dest="no_gating", help="run the palm detector every frame")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="handpipe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a sequence script to a scene stream")
    p.add_argument("--script", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override the script seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="run the tracking graph over a scene stream")
    p.add_argument("--in", required=True, help="scene stream (JSONL)")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=4, help="graph worker threads (0 = inline)")
    _pipeline_flags(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("gesture", help="recompute gesture labels of a tracking stream")
    p.add_argument("--in", required=True, help="tracking stream (JSONL)")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="pipeline config whose gesture_table to apply")
    p.set_defaults(func=cmd_gesture)

    p = sub.add_parser("eval", help="score a tracking stream against its scenes")
    p.add_argument("--in", required=True, help="tracking stream (JSONL)")
    p.add_argument("--scenes", required=True, help="scene stream the tracks were computed from")
    p.add_argument("--out", help="report path (default stdout)")
    p.add_argument("--iou", type=float, default=0.5, help="AP match IoU")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time the pipeline with and without gating")
    p.add_argument("--in", help="scene stream; default is a steady single-hand sequence")
    p.add_argument("--script", help="sequence script to simulate instead of --in")
    p.add_argument("--frames", type=int, default=300)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--out", help="report path (default stdout)")
    _pipeline_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", help="write one SVG skeleton per tracked frame")
    p.add_argument("--in", required=True, help="tracking stream (JSONL)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=640)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("HANDPIPE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"handpipe {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
