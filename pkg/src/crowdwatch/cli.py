"""Command-line interface: ``detect``, ``simulate``, ``eval`` and ``bench``.

Exit codes: 0 success, 1 input error, 2 usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import sys
from pathlib import Path
from typing import Iterator, Sequence, TextIO

import numpy as np

from . import io as tio
from .config import ConfigError, RunConfig, load_config
from .domain import CrowdWatchError, Observation, StreamValidator
from .evaluation import evaluate, measure_blt, roc_curve, eer, write_metrics, \
    write_roc_csv, write_timing_csv
from .pipeline import Pipeline
from .simulator import PRESETS, NoiseModel, UnknownPreset, build_scenario, corrupt, simulate

EXIT_OK, EXIT_INPUT, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'section.key = value' config file")
    p.add_argument("--threshold", type=float, help="anomaly score threshold")
    p.add_argument("--local-window", type=float, help="local window in seconds")
    p.add_argument("--global-window", type=float, help="global window in seconds")
    p.add_argument("--fps", type=float, help="frames per second of the input")
    p.add_argument("--clusters", help="'auto' or a fixed cluster count")
    p.add_argument("--coast-frames", type=int, help="frames a track may go unobserved")
    p.add_argument("--seed", type=int, help="seed for every random choice")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crowdwatch",
                                     description="Online crowd trajectory anomaly detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", help="stream trajectories in, anomaly events out")
    d.add_argument("--input", default="-", help="trajectory file or '-' for stdin")
    d.add_argument("--format", choices=tio.FORMATS, default="csv")
    _add_config_flags(d)
    d.add_argument("--emit-roc", metavar="PATH", help="write ROC CSV (input needs labels)")
    d.add_argument("--verbose-scores", action="store_true",
                   help="emit a score record for every scored agent and frame")
    d.add_argument("--retain-events-only", action="store_true",
                   help="never echo records of agents that are not flagged")

    s = sub.add_parser("simulate", help="generate a labelled synthetic crowd")
    s.add_argument("--preset", required=True, help=f"one of {', '.join(PRESETS)}")
    s.add_argument("--output", default="-", help="trajectory file or '-' for stdout")
    s.add_argument("--labels", help="write frame,agent_id,label ground truth here")
    s.add_argument("--format", choices=tio.FORMATS, default="csv")
    s.add_argument("--with-labels", action="store_true", help="add a label column")
    s.add_argument("--agents", type=int, help="agent count (presets that allow it)")
    s.add_argument("--frames", type=int, help="number of frames")
    s.add_argument("--position-sigma", type=float, default=0.0, help="tracker jitter std")
    s.add_argument("--dropout", type=float, default=0.0, help="per-sample drop probability")
    _add_config_flags(s)

    e = sub.add_parser("eval", help="score detector output against labels")
    e.add_argument("--input", required=True, help="events or verbose score records")
    e.add_argument("--labels", required=True, help="frame,agent_id,label file")
    _add_config_flags(e)
    e.add_argument("--emit-roc", metavar="PATH", help="write ROC CSV")
    e.add_argument("--plot", metavar="PNG", help="render the ROC curve")

    b = sub.add_parser("bench", help="per-frame behaviour-learning time")
    b.add_argument("--preset", default="lane_flow", help=f"one of {', '.join(PRESETS)}")
    b.add_argument("--agents", type=int, default=100)
    b.add_argument("--frames", type=int, default=300)
    b.add_argument("--position-sigma", type=float, default=0.05)
    b.add_argument("--dropout", type=float, default=0.05)
    b.add_argument("--output", default="-", help="timing CSV or '-' for stdout")
    b.add_argument("--plot", metavar="PNG", help="render the timing distribution")
    _add_config_flags(b)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    try:
        base = load_config(args.config)
    except OSError as exc:
        raise CrowdWatchError(f"cannot read config: {exc}") from exc
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    try:
        return base.with_overrides({
            "detector.threshold": args.threshold,
            "behavior.local_window": args.local_window,
            "behavior.global_window": args.global_window,
            "run.fps": args.fps,
            "behavior.clusters": args.clusters,
            "filter.coast_limit": args.coast_frames,
            "run.seed": args.seed,
        })
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


@contextlib.contextmanager
def _open_out(path: str | None, stdout: TextIO) -> Iterator[TextIO]:
    if path is None or path == "-":
        yield stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


@contextlib.contextmanager
def _open_in(path: str, stdin: TextIO) -> Iterator[TextIO]:
    if path == "-":
        yield stdin
    else:
        with open(path, newline="") as fh:
            yield fh


def run_detect(args: argparse.Namespace, stdin: TextIO, stdout: TextIO) -> int:
    cfg = resolve_config(args)
    pipeline = Pipeline(cfg.pipeline_config())
    threshold = cfg["detector.threshold"]
    validator = StreamValidator()
    labelled: list[tuple[float, bool]] = []
    labels: dict[str, bool | None] = {}
    batch: list[Observation] = []
    frame: int | None = None

    def flush() -> None:
        nonlocal batch, frame
        if frame is None:
            return
        result = pipeline.process_frame(frame, batch)
        if args.verbose_scores:
            flagged = {e.agent_id for e in result.events}
            for a, s in zip(result.agent_ids, result.scores):
                if args.retain_events_only and a not in flagged:
                    continue
                stdout.write(tio.score_record(result.frame, a, s, a in flagged) + "\n")
        else:
            for e in result.events:
                stdout.write(tio.event_record(e.frame, e.agent_id, e.score, threshold,
                                              e.scope.value) + "\n")
        stdout.flush()
        if args.emit_roc:
            for a, s in zip(result.agent_ids, result.scores):
                if labels.get(a) is not None:
                    labelled.append((float(s), bool(labels[a])))
        batch, frame = [], None
        labels.clear()

    with _open_in(args.input, stdin) as fh:
        for rec in tio.iter_records(fh, args.format):
            if isinstance(rec, tio.FrameBreak):
                flush()
                continue
            obs = validator.check(rec.observation())
            if frame is not None and obs.frame != frame:
                flush()
            frame = obs.frame
            batch.append(obs)
            labels[obs.agent_id] = rec.label
        flush()

    if args.emit_roc:
        if not labelled:
            raise CrowdWatchError("--emit-roc needs a labelled input with scored samples")
        s, y = (np.array(v) for v in zip(*labelled))
        with open(args.emit_roc, "w") as out:
            write_roc_csv(roc_curve((s, y.astype(bool))), out)
    return EXIT_OK


def _scenario(args: argparse.Namespace, cfg: RunConfig):
    overrides = {"fps": cfg.fps, "params": cfg.agent_params()}
    if args.agents is not None:
        overrides["n_agents"] = args.agents
    if args.frames is not None:
        overrides["duration"] = args.frames
    try:
        return build_scenario(args.preset, seed=cfg.seed, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def run_simulate(args: argparse.Namespace, stdout: TextIO) -> int:
    cfg = resolve_config(args)
    scenario = _scenario(args, cfg)
    result = simulate(scenario, seed=cfg.seed)
    try:
        noise = NoiseModel(args.position_sigma, args.dropout, seed=cfg.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    label_map = result.label_map()
    records = (tio.TrajectoryRecord(o.frame, o.agent_id, o.position.x, o.position.y,
                                    label_map[(o.frame, o.agent_id)])
               for o in corrupt(result, noise))
    with _open_out(args.output, stdout) as out:
        tio.write_trajectories(records, out, args.format, args.with_labels)
    if args.labels:
        with open(args.labels, "w") as out:
            tio.write_labels(label_map, out)
    return EXIT_OK


def run_eval(args: argparse.Namespace, stdout: TextIO) -> int:
    cfg = resolve_config(args)
    with open(args.labels) as fh:
        labels = tio.read_labels(fh)
    with open(args.input) as fh:
        scores, complete = tio.read_scores(fh)
    missing = sorted(k for k in scores if k not in labels)
    if missing:
        raise tio.KeyMismatch(missing)
    # event streams only list exceedances: every other labelled sample scored zero
    keys = sorted(scores) if complete else sorted(labels)
    s = np.array([scores.get(k, 0.0) for k in keys])
    y = np.array([labels[k] for k in keys], dtype=bool)
    threshold = cfg["detector.threshold"]
    metrics = evaluate((s, y), threshold)
    write_metrics(metrics, threshold, len(keys), stdout)
    if args.emit_roc:
        with open(args.emit_roc, "w") as out:
            write_roc_csv(metrics.roc, out)
    if args.plot:
        from .plotting import plot_roc
        plot_roc(metrics.roc, args.plot, metrics.eer)
    return EXIT_OK


def run_bench(args: argparse.Namespace, stdout: TextIO, stderr: TextIO) -> int:
    cfg = resolve_config(args)
    if args.agents is not None and args.agents < 1 or args.frames is not None and args.frames < 1:
        raise UsageError("--agents and --frames must be >= 1")
    scenario = _scenario(args, cfg)
    result = simulate(scenario, seed=cfg.seed)
    try:
        noise = NoiseModel(args.position_sigma, args.dropout, seed=cfg.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    obs = corrupt(result, noise)
    by_frame: dict[int, list[Observation]] = {f: [] for f in range(result.n_frames)}
    for o in obs:
        by_frame[o.frame].append(o)
    pipeline = Pipeline(cfg.pipeline_config())
    report = measure_blt(by_frame.items(), pipeline.process_frame)
    to_stdout = args.output in (None, "-")
    with _open_out(args.output, stdout) as out:
        write_timing_csv(report, out)
    summary = (f"preset={args.preset} agents={scenario.n_agents} {report.summary()}\n")
    (stderr if to_stdout else stdout).write(summary)
    if args.plot:
        from .plotting import plot_timing
        plot_timing(report, args.plot)
    return EXIT_OK


def main(argv: Sequence[str] | None = None, stdin: TextIO | None = None,
         stdout: TextIO | None = None, stderr: TextIO | None = None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "detect":
            return run_detect(args, stdin, stdout)
        if args.command == "simulate":
            return run_simulate(args, stdout)
        if args.command == "eval":
            return run_eval(args, stdout)
        return run_bench(args, stdout, stderr)
    except (UsageError, UnknownPreset) as exc:
        stderr.write(f"crowdwatch {args.command}: {exc}\n")
        return EXIT_USAGE
    except (CrowdWatchError, OSError, ValueError) as exc:
        stderr.write(f"crowdwatch {args.command}: {exc}\n")
        return EXIT_INPUT
    except BrokenPipeError:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
