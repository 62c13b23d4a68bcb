# src/services/recording_service.py
"""Session recording and deterministic replay.

File format (UTF-8 text):
  - optional leading metadata lines  `# key=value`
  - one header line                  `seq,t_ms,ax,ay,az,gx,gy,gz,roll,pitch,yaw`
  - one line per sample              `seq,t_ms,ax,ay,az,gx,gy,gz[,roll,pitch,yaw]`
  - optional trailing log lines      `# event=t_ms,kind,value`
                                     `# command=t_ms,frequency_hz,intensity,duration_ms`
Floats are written with repr(), the shortest text that round-trips exactly,
and read back with pandas' round-trip float parser.
"""

from __future__ import annotations

import io
import logging
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import IO, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import pandas as pd

from src.core.types import (
    GaitEvent,
    GaitEventKind,
    ImuSample,
    MotorCommand,
    OrientationState,
    SessionMetadata,
    SessionRecording,
    wrap_angle,
)
from src.errors import InvalidArgumentError, RecordingParseError, StreamOrderError

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

HEADER = "seq,t_ms,ax,ay,az,gx,gy,gz,roll,pitch,yaw"
COLUMNS = HEADER.split(",")
_SAMPLE_FIELDS = 8
_FULL_FIELDS = len(COLUMNS)
_ANGLE_COLUMNS = COLUMNS[_SAMPLE_FIELDS:]

EVENT_KEY = "event"
COMMAND_KEY = "command"
_EVENT_COLUMNS = ["t_ms", "kind", "value"]
_COMMAND_COLUMNS = ["t_ms", "frequency_hz", "intensity", "duration_ms"]

StreamItem = Union[ImuSample, Tuple[ImuSample, Optional[OrientationState]]]


def new_metadata(scenario: str = "", session_id: Optional[str] = None,
                 fall_onset_ms: Optional[int] = None) -> SessionMetadata:
    started = datetime.now(timezone.utc).replace(microsecond=0)
    return SessionMetadata(
        session_id=session_id or f"session-{started.strftime('%Y%m%dT%H%M%SZ')}",
        started_at=started.isoformat(),
        scenario=scenario,
        fall_onset_ms=fall_onset_ms,
    )


def _metadata_lines(metadata: SessionMetadata) -> List[str]:
    lines = [
        f"# session_id={metadata.session_id}",
        f"# started_at={metadata.started_at}",
        f"# scenario={metadata.scenario}",
    ]
    if metadata.fall_onset_ms is not None:
        lines.append(f"# fall_onset_ms={metadata.fall_onset_ms}")
    if metadata.step_times_ms:
        lines.append("# step_times_ms=" + ";".join(str(t) for t in metadata.step_times_ms))
    return lines


def format_sample(sample: ImuSample, orientation: Optional[OrientationState] = None) -> str:
    fields = [str(sample.seq), str(sample.t_ms)]
    fields.extend(repr(v) for v in sample.accel)
    fields.extend(repr(v) for v in sample.gyro)
    if orientation is not None:
        fields.extend(repr(v) for v in (orientation.roll_deg, orientation.pitch_deg, orientation.yaw_deg))
    return ",".join(fields)


def format_event(event: GaitEvent) -> str:
    return f"# {EVENT_KEY}={event.as_line()}"


def format_command(command: MotorCommand) -> str:
    return f"# {COMMAND_KEY}={command.as_line()}"


class SessionRecorder:
    """Append-only, single-writer recording file.

    Rows go to `<path>.tmp` as they arrive; close() moves the finished file
    into place. A recorder left through an exception removes its temp file
    and never touches `path`.
    """

    def __init__(self, path: str, metadata: SessionMetadata):
        self.path = path
        self.tmp_path = path + ".tmp"
        self.metadata = metadata
        self.count = 0
        self._last: Optional[ImuSample] = None
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        self._fh: Optional[IO[str]] = open(self.tmp_path, "w", encoding="utf-8", newline="\n")
        for line in _metadata_lines(metadata):
            self._fh.write(line + "\n")
        self._fh.write(HEADER + "\n")

    def append(self, sample: ImuSample, orientation: Optional[OrientationState] = None) -> None:
        if self._fh is None:
            raise InvalidArgumentError(f"recorder for {self.path} is closed")
        if self._last is not None and (sample.t_ms <= self._last.t_ms or sample.seq <= self._last.seq):
            raise StreamOrderError(
                f"sample seq={sample.seq} t_ms={sample.t_ms} out of order after seq={self._last.seq}",
                index=self.count)
        self._fh.write(format_sample(sample, orientation) + "\n")
        self._fh.flush()
        self._last = sample
        self.count += 1

    def close(self, events: Sequence[GaitEvent] = (), commands: Sequence[MotorCommand] = ()) -> None:
        if self._fh is None:
            return
        try:
            for event in events:
                self._fh.write(format_event(event) + "\n")
            for command in commands:
                self._fh.write(format_command(command) + "\n")
            self._fh.close()
            self._fh = None
            os.replace(self.tmp_path, self.path)
        except BaseException:
            self.abort()
            raise
        logger.info("RECORDING_CLOSED path=%s samples=%d events=%d commands=%d",
                    self.path, self.count, len(events), len(commands))

    def abort(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
        if os.path.exists(self.tmp_path):
            try:
                os.remove(self.tmp_path)
            except OSError:
                pass
        logger.info("RECORDING_ABORTED path=%s samples=%d", self.path, self.count)

    def __enter__(self) -> "SessionRecorder":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.close()
        else:
            self.abort()


def _split_item(item: StreamItem) -> Tuple[ImuSample, Optional[OrientationState]]:
    if isinstance(item, ImuSample):
        return item, None
    return item[0], item[1]


def record_session(stream: Iterable[StreamItem], path: str,
                   metadata: Optional[SessionMetadata] = None) -> SessionRecording:
    metadata = metadata or new_metadata()
    samples: List[ImuSample] = []
    orientations: List[Optional[OrientationState]] = []
    with SessionRecorder(path, metadata) as recorder:
        for item in stream:
            sample, orientation = _split_item(item)
            recorder.append(sample, orientation)
            samples.append(sample)
            orientations.append(orientation)
    return SessionRecording(metadata=metadata, samples=tuple(samples), orientations=tuple(orientations))


def write_recording(recording: SessionRecording, path: str) -> None:
    """Write a complete recording: samples, their angles, events and motor commands."""
    orientations = recording.orientations or (None,) * len(recording.samples)
    recorder = SessionRecorder(path, recording.metadata)
    try:
        for sample, orientation in zip(recording.samples, orientations):
            recorder.append(sample, orientation)
    except BaseException:
        recorder.abort()
        raise
    recorder.close(recording.events, recording.commands)


# ---------------- Reading -----------------
@dataclass
class _Layout:
    """Line-level map of a recording file, gathered before pandas parses the rows."""

    metadata: dict = field(default_factory=dict)
    data_lines: List[int] = field(default_factory=list)
    events: List[Tuple[int, str]] = field(default_factory=list)
    commands: List[Tuple[int, str]] = field(default_factory=list)


def _scan_layout(path: str) -> _Layout:
    layout = _Layout()
    header_seen = False
    with open(path, "r", encoding="utf-8") as f:
        for line_number, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if not sep:
                    raise RecordingParseError("comment line must be '# key=value'", line_number)
                key, value = key.strip(), value.strip()
                if key == EVENT_KEY:
                    layout.events.append((line_number, value))
                elif key == COMMAND_KEY:
                    layout.commands.append((line_number, value))
                elif header_seen:
                    raise RecordingParseError(f"unexpected '{key}' line after the header", line_number)
                else:
                    layout.metadata[key] = value
                continue
            if not header_seen:
                if line != HEADER:
                    raise RecordingParseError(f"expected header '{HEADER}'", line_number)
                header_seen = True
                continue
            width = line.count(",") + 1
            if width not in (_SAMPLE_FIELDS, _FULL_FIELDS):
                raise RecordingParseError(
                    f"expected {_SAMPLE_FIELDS} or {_FULL_FIELDS} fields, got {width}", line_number)
            layout.data_lines.append(line_number)
    if not header_seen:
        raise RecordingParseError(f"missing header '{HEADER}'")
    return layout


def _check_numeric(frame: pd.DataFrame, columns: Sequence[str], line_numbers: Sequence[int],
                   integer: Sequence[str] = ()) -> None:
    """Raise on the first row holding a non-numeric (or, for `integer`, non-integral) value."""
    for column in columns:
        values = frame[column]
        numeric = pd.to_numeric(values, errors="coerce")
        bad = numeric.isna() & values.notna()
        if column in integer:
            bad |= numeric.notna() & (numeric % 1 != 0)
        if bad.any():
            row = int(bad.to_numpy().argmax())
            raise RecordingParseError(f"{column}={values.iloc[row]!r} is not a valid number", line_numbers[row])


def _read_samples(path: str, layout: _Layout) -> List[Tuple[ImuSample, Optional[OrientationState]]]:
    lines = layout.data_lines
    try:
        frame = pd.read_csv(path, comment="#", header=0, dtype={"seq": object, "t_ms": object},
                            float_precision="round_trip", encoding="utf-8")
    except (pd.errors.ParserError, ValueError) as e:
        raise RecordingParseError(f"malformed sample rows: {e}") from e
    if len(frame) != len(lines):
        raise RecordingParseError(f"parsed {len(frame)} sample rows, expected {len(lines)}")

    _check_numeric(frame, COLUMNS, lines, integer=("seq", "t_ms"))
    required = frame[COLUMNS[:_SAMPLE_FIELDS]].isna().any(axis=1)
    if required.any():
        row = int(required.to_numpy().argmax())
        raise RecordingParseError("missing sample field", lines[row])
    angle_count = frame[_ANGLE_COLUMNS].notna().sum(axis=1)
    partial = (angle_count != 0) & (angle_count != len(_ANGLE_COLUMNS))
    if partial.any():
        row = int(partial.to_numpy().argmax())
        raise RecordingParseError("orientation needs all of roll, pitch, yaw", lines[row])

    rows: List[Tuple[ImuSample, Optional[OrientationState]]] = []
    previous: Optional[ImuSample] = None
    numbers = frame[COLUMNS[2:]].astype("float64")
    for index, (seq, t_ms, values) in enumerate(zip(frame["seq"], frame["t_ms"], numbers.itertuples(index=False))):
        line_number = lines[index]
        try:
            t = int(t_ms)
            sample = ImuSample(t_ms=t, accel=tuple(values[0:3]), gyro=tuple(values[3:6]),
                               seq=int(seq))
            orientation = None
            if angle_count.iloc[index]:
                roll, pitch, yaw = (wrap_angle(v) for v in values[6:9])
                orientation = OrientationState(roll_deg=roll, pitch_deg=pitch, yaw_deg=yaw, t_ms=t)
        except (ValueError, InvalidArgumentError) as e:
            raise RecordingParseError(str(e), line_number) from e
        if previous is not None and (sample.t_ms <= previous.t_ms or sample.seq <= previous.seq):
            raise StreamOrderError(
                f"line {line_number}: seq={sample.seq} t_ms={sample.t_ms} out of order", index=index)
        previous = sample
        rows.append((sample, orientation))
    return rows


def _read_log(entries: List[Tuple[int, str]], columns: List[str]) -> Tuple[pd.DataFrame, List[int]]:
    line_numbers = [n for n, _ in entries]
    if not entries:
        return pd.DataFrame(columns=columns), line_numbers
    for line_number, payload in entries:
        if payload.count(",") + 1 != len(columns):
            raise RecordingParseError(f"expected {len(columns)} fields", line_number)
    text = "\n".join(payload for _, payload in entries)
    frame = pd.read_csv(io.StringIO(text), header=None, names=columns, dtype=object)
    numeric = [c for c in columns if c != "kind"]
    _check_numeric(frame, numeric, line_numbers, integer=("t_ms",) if "kind" in columns else ())
    return frame, line_numbers


def _read_events(layout: _Layout) -> Tuple[GaitEvent, ...]:
    frame, lines = _read_log(layout.events, _EVENT_COLUMNS)
    events = []
    for index, row in enumerate(frame.itertuples(index=False)):
        try:
            events.append(GaitEvent(kind=GaitEventKind(row.kind), t_ms=int(row.t_ms), value=float(row.value)))
        except ValueError as e:
            raise RecordingParseError(f"bad event: {e}", lines[index]) from e
    return tuple(events)


def _read_commands(layout: _Layout) -> Tuple[MotorCommand, ...]:
    frame, lines = _read_log(layout.commands, _COMMAND_COLUMNS)
    commands = []
    for index, row in enumerate(frame.itertuples(index=False)):
        try:
            commands.append(MotorCommand(t_ms=float(row.t_ms), frequency_hz=float(row.frequency_hz),
                                         intensity=float(row.intensity), duration_ms=float(row.duration_ms)))
        except ValueError as e:
            raise RecordingParseError(f"bad motor command: {e}", lines[index]) from e
    return tuple(commands)


def _parse_metadata(pairs: dict) -> SessionMetadata:
    onset = pairs.get("fall_onset_ms")
    steps = pairs.get("step_times_ms", "")
    return SessionMetadata(
        session_id=pairs.get("session_id", ""),
        started_at=pairs.get("started_at", ""),
        scenario=pairs.get("scenario", ""),
        fall_onset_ms=int(onset) if onset not in (None, "") else None,
        step_times_ms=tuple(int(t) for t in steps.split(";") if t),
    )


def load_session(path: str) -> SessionRecording:
    layout = _scan_layout(path)
    rows = _read_samples(path, layout)
    try:
        metadata = _parse_metadata(layout.metadata)
    except ValueError as e:
        raise RecordingParseError(f"bad metadata: {e}") from e
    try:
        return SessionRecording(
            metadata=metadata,
            samples=tuple(s for s, _ in rows),
            events=_read_events(layout),
            commands=_read_commands(layout),
            orientations=tuple(o for _, o in rows),
        )
    except InvalidArgumentError as e:
        raise RecordingParseError(str(e)) from e


def replay_session(path: str, rate_multiplier: float = 0.0) -> Iterator[ImuSample]:
    """Yield recorded samples in order, paced at rate_multiplier x real time (0 = as fast as possible)."""
    if rate_multiplier < 0:
        raise InvalidArgumentError("rate multiplier must be >= 0")
    samples = load_session(path).samples
    start_wall = time.monotonic()
    first_t: Optional[int] = None
    for sample in samples:
        if rate_multiplier > 0:
            if first_t is None:
                first_t = sample.t_ms
            due = (sample.t_ms - first_t) / 1000.0 / rate_multiplier
            delay = due - (time.monotonic() - start_wall)
            if delay > 0:
                time.sleep(delay)
        yield sample


__all__ = [
    "HEADER",
    "SessionRecorder",
    "format_command",
    "format_event",
    "format_sample",
    "load_session",
    "new_metadata",
    "record_session",
    "replay_session",
    "write_recording",
]
