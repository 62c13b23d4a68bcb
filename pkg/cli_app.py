# cli_app.py
"""Operator entry point.

    python cli_app.py simulate --scenario scenarios/gait_10mwt.ini --output data/gait.csv --seed 1
    python cli_app.py analyze  --input data/gait.csv --series data/gait_series.csv
    python cli_app.py listen   --port 5005 --output data/live.csv --timeout-ms 5000
    python cli_app.py train    --input data/wtf_*.csv --output models/risk.txt
    python cli_app.py run      --input data/wtf_7.csv --model models/risk.txt --output data/commands.txt
"""

import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence, Tuple

import pandas as pd

from src import config
from src.config import IS_CONFIG_VALID
from src.core.analysis import analyze_recording, command_log, event_log, write_series_csv, write_text
from src.core.pipeline import SessionPipeline
from src.core.run_config import RunConfig, load_run_config, load_scenario
from src.errors import ConfigurationError, EquilivestError, InvalidArgumentError
from src.services.recording_service import SessionRecorder, load_session, new_metadata, record_session, write_recording
from src.services.risk_model_service import (
    best_threshold,
    evaluate,
    load_model,
    metrics_frame,
    save_model,
    train,
    windows_from_recordings,
)
from src.services.simulator_service import simulate
from src.services.telemetry_service import TelemetryListener, stream_udp

logger = logging.getLogger(__name__)


def _parse_target(target: str) -> Tuple[str, int]:
    host, sep, port = target.rpartition(":")
    if not sep or not host:
        raise InvalidArgumentError(f"--target must be host:port, got '{target}'")
    try:
        return host, int(port)
    except ValueError as e:
        raise InvalidArgumentError(f"--target port must be an integer, got '{port}'") from e


def _in_order(listener: TelemetryListener):
    """Live samples with out-of-order and duplicate packets left out."""
    last = None
    for sample, orientation in listener:
        if last is not None and (sample.seq <= last.seq or sample.t_ms <= last.t_ms):
            logger.debug("LIVE_SKIP seq=%d t_ms=%d after seq=%d", sample.seq, sample.t_ms, last.seq)
            continue
        last = sample
        yield sample, orientation


def _open_listener(args, run_config: RunConfig) -> TelemetryListener:
    telemetry = run_config.telemetry
    listener = TelemetryListener(port=telemetry.port, host=telemetry.host, timeout_ms=telemetry.timeout_ms,
                                 queue_size=telemetry.queue_size)
    print(f"Listening on UDP {telemetry.host}:{listener.port} (timeout_ms={telemetry.timeout_ms})")
    return listener.start()


def cmd_listen(args, run_config: RunConfig) -> int:
    listener = _open_listener(args, run_config)
    with SessionRecorder(args.output, new_metadata(scenario="live")) as recorder:
        for sample, orientation in _in_order(listener):
            recorder.append(sample, orientation)
    print(f"Recorded {recorder.count} samples to {args.output}")
    print(f"Stream stats: {listener.stats.summary()}")
    return 0


def cmd_analyze(args, run_config: RunConfig) -> int:
    recording = load_session(args.input)
    model = load_model(args.model) if args.model else None
    report = analyze_recording(recording, run_config, model)
    text = report.format()
    if args.output:
        write_text(args.output, text)
        print(f"Report written to {args.output}")
    else:
        print(text, end="")
    if args.series:
        write_series_csv(report.result, args.series)
        print(f"Series written to {args.series}")
    if args.events_output:
        write_text(args.events_output, event_log(report.result))
    return 0


def cmd_simulate(args, run_config: RunConfig) -> int:
    if not args.scenario:
        raise InvalidArgumentError("simulate needs --scenario")
    if not args.output and not args.target:
        raise InvalidArgumentError("simulate needs --output and/or --target")
    scenario = load_scenario(args.scenario)
    run = simulate(scenario, args.seed)
    print(f"Simulated {scenario.kind} seed={args.seed}: {len(run.samples)} samples, "
          f"{len(run.truth.step_times_ms)} steps, fall_onset_ms={run.truth.fall_onset_ms}")

    if args.output:
        record_session(run.samples, args.output, run.metadata())
        print(f"Recording written to {args.output}")
    if args.target:
        host, port = _parse_target(args.target)
        multiplier = 0.0 if args.fast else (args.rate_multiplier if args.rate_multiplier is not None
                                            else run_config.telemetry.rate_multiplier)
        sent = stream_udp(run.samples, host, port, rate_multiplier=multiplier)
        print(f"Sent {sent} packets to {host}:{port}")
    return 0


def _load_annotations(path: str) -> dict:
    try:
        table = pd.read_csv(path)
    except (OSError, ValueError) as e:
        raise ConfigurationError(f"cannot read annotations {path}: {e}", field="annotations") from e
    missing = {"recording", "fall_onset_ms"} - set(table.columns)
    if missing:
        raise ConfigurationError(f"annotations {path} lack columns {sorted(missing)}", field="annotations")
    table = table.dropna(subset=["fall_onset_ms"])
    return {os.path.basename(str(r)): float(t) for r, t in zip(table["recording"], table["fall_onset_ms"])}


def cmd_train(args, run_config: RunConfig) -> int:
    recordings = [load_session(path) for path in args.input]
    onsets: List[Optional[float]] = [None] * len(recordings)
    if args.annotations:
        annotated = _load_annotations(args.annotations)
        onsets = [annotated.get(os.path.basename(path)) for path in args.input]

    windows = windows_from_recordings(recordings, run_config.risk, run_config.fusion, onsets,
                                      show_progress=config.SHOW_PROGRESS)
    positives = sum(w.label for w in windows)
    print(f"Labeled {len(windows)} windows from {len(recordings)} recordings ({positives} pre-fall)")
    model = train(windows, run_config.training, show_progress=config.SHOW_PROGRESS)
    save_model(model, args.output)

    metrics = evaluate(model, windows)
    best = best_threshold(metrics)
    print(f"Model written to {args.output}")
    print(f"Training fit: threshold={best.threshold:.2f} sensitivity={best.sensitivity:.3f} "
          f"specificity={best.specificity:.3f} mean_lead_time_ms={best.mean_lead_time_ms:.1f}")
    if args.report:
        metrics_frame(metrics).to_csv(args.report, index=False)
        print(f"Threshold sweep written to {args.report}")
    return 0


def cmd_run(args, run_config: RunConfig) -> int:
    model = load_model(args.model) if args.model else None
    pipeline = SessionPipeline(run_config, model)
    if args.input:
        recording = load_session(args.input)
        pipeline.feed_all(recording.samples)
        source = args.input
        metadata = recording.metadata
        device_angles = list(recording.orientations)
        stats = None
    else:
        listener = _open_listener(args, run_config)
        metadata = new_metadata(scenario="live")
        device_angles = []
        for sample, orientation in _in_order(listener):
            device_angles.append(orientation)
            pipeline.feed(sample)
        source = f"udp:{run_config.telemetry.port}"
        stats = listener.stats
    result = pipeline.finish()
    if args.record:
        write_recording(result.to_recording(metadata, device_angles), args.record)
        print(f"Session recording written to {args.record}")

    for command in result.commands:
        logger.info("MOTOR %s", command.as_line())
    if args.output:
        write_text(args.output, command_log(result))
    if args.events_output:
        write_text(args.events_output, event_log(result))

    print(f"Session {metadata.session_id} from {source}: {len(result.samples)} samples, "
          f"{len(result.events)} events, {len(result.commands)} motor commands")
    if stats is not None:
        print(f"Stream stats: {stats.summary()}")
    if not args.output:
        print(command_log(result), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="equilivest", description="Balance vest host tools")
    parser.add_argument("--config", default=None, help="INI run configuration")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=argparse.SUPPRESS, help="INI run configuration")

    listen = sub.add_parser("listen", help="record incoming telemetry")
    common(listen)
    listen.add_argument("--port", type=int, default=None)
    listen.add_argument("--host", default=None, help="bind address (default: [telemetry] host)")
    listen.add_argument("--output", required=True)
    listen.add_argument("--timeout-ms", type=int, default=None, help="stop after this long without packets")
    listen.set_defaults(handler=cmd_listen)

    analyze = sub.add_parser("analyze", help="analyze a recording")
    common(analyze)
    analyze.add_argument("--input", required=True)
    analyze.add_argument("--output", default=None, help="report path (default stdout)")
    analyze.add_argument("--series", default=None, help="plot-ready CSV t_ms,roll,pitch,yaw,gx,gz")
    analyze.add_argument("--events-output", default=None)
    analyze.add_argument("--model", default=None)
    analyze.set_defaults(handler=cmd_analyze)

    sim = sub.add_parser("simulate", help="generate a synthetic session")
    common(sim)
    sim.add_argument("--scenario", "--input", dest="scenario", default=None)
    sim.add_argument("--output", default=None)
    sim.add_argument("--target", default=None, help="host:port to stream packets to")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--fast", action="store_true", help="stream without real-time pacing")
    sim.add_argument("--rate-multiplier", type=float, default=None)
    sim.set_defaults(handler=cmd_simulate)

    tr = sub.add_parser("train", help="train the fall-risk predictor")
    common(tr)
    tr.add_argument("--input", nargs="+", required=True)
    tr.add_argument("--annotations", default=None, help="CSV with recording,fall_onset_ms")
    tr.add_argument("--output", required=True)
    tr.add_argument("--report", default=None, help="threshold sweep CSV")
    tr.set_defaults(handler=cmd_train)

    run = sub.add_parser("run", help="closed-loop feedback over a recording or live stream")
    common(run)
    run.add_argument("--input", default=None, help="recording (default: listen on UDP)")
    run.add_argument("--port", type=int, default=None)
    run.add_argument("--host", default=None, help="bind address (default: [telemetry] host)")
    run.add_argument("--timeout-ms", type=int, default=None)
    run.add_argument("--model", default=None)
    run.add_argument("--output", default=None, help="motor command log")
    run.add_argument("--events-output", default=None)
    run.add_argument("--record", default=None, help="write samples, events and motor commands here")
    run.set_defaults(handler=cmd_run)
    return parser


def _run_config(args) -> RunConfig:
    path = args.config
    if path is None and os.path.isfile(config.CONFIG_FILE):
        path = config.CONFIG_FILE
    overrides = {"telemetry": {"host": getattr(args, "host", None), "port": getattr(args, "port", None),
                               "timeout_ms": getattr(args, "timeout_ms", None)}}
    return load_run_config(path, overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=config.LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s %(message)s")

    if not IS_CONFIG_VALID:
        print("Error: Configuration is not valid. Please check your .env file.", file=sys.stderr)
        return ConfigurationError.exit_code

    try:
        run_config = _run_config(args)
        return args.handler(args, run_config)
    except EquilivestError as e:
        print(f"Error ({type(e).__name__}): {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print("\nInterrupted.", file=sys.stderr)
        return 130
    except Exception as e:
        logger.exception("UNEXPECTED_ERROR")
        print(f"An unexpected error occurred: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
