# src/core/analysis.py
"""Offline session analysis: report text, event log and plot-ready series."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import List, Optional

import pandas as pd
from tqdm import tqdm

from src import config
from src.core.pipeline import SessionPipeline, SessionResult
from src.core.run_config import RunConfig
from src.core.types import GaitEventKind, SessionRecording
from src.services.detection_service import estimate_cadence
from src.services.risk_model_service import RiskModel

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

SERIES_COLUMNS = ["t_ms", "roll", "pitch", "yaw", "gx", "gz"]


@dataclass
class AnalysisReport:
    recording: SessionRecording
    result: SessionResult
    cadence_window_ms: float = config.CADENCE_WINDOW_MS

    @property
    def step_count(self) -> int:
        return len(self.result.steps)

    @property
    def cadence_sps(self) -> float:
        steps = self.result.steps
        if len(steps) < 2:
            return 0.0
        span = steps[-1].t_ms - steps[0].t_ms
        return (len(steps) - 1) / (span / 1000.0) if span > 0 else 0.0

    @property
    def trailing_cadence_sps(self) -> float:
        return estimate_cadence(self.result.steps, self.cadence_window_ms)

    @property
    def breakpoint_events(self):
        return self.result.events_of(GaitEventKind.BREAKPOINT_CROSSED)

    @property
    def fall_events(self):
        return self.result.events_of(GaitEventKind.FALL_DETECTED)

    def summary_lines(self) -> List[str]:
        metadata = self.recording.metadata
        lines = [
            f"session_id: {metadata.session_id}",
            f"scenario: {metadata.scenario or '-'}",
            f"samples: {len(self.recording.samples)}",
            f"duration_ms: {self.recording.duration_ms}",
            f"step_count: {self.step_count}",
            f"cadence_sps: {self.cadence_sps:.3f}",
            f"trailing_cadence_sps: {self.trailing_cadence_sps:.3f}",
            f"breakpoint_events: {len(self.breakpoint_events)}",
            f"fall_events: {len(self.fall_events)}",
            f"motor_commands: {len(self.result.commands)}",
        ]
        if metadata.fall_onset_ms is not None:
            lines.append(f"annotated_fall_onset_ms: {metadata.fall_onset_ms}")
        if self.result.risks:
            peak_end, peak_risk = max(self.result.risks, key=lambda item: item[1])
            lines.append(f"peak_risk: {peak_risk:.4f} at window_end_ms={peak_end:g}")
        return lines

    def format(self) -> str:
        lines = ["# Session analysis", *self.summary_lines(), "", "# Events (t_ms,kind,value)"]
        lines.extend(event.as_line() for event in self.result.events)
        return "\n".join(lines) + "\n"


def event_log(result: SessionResult) -> str:
    return "".join(event.as_line() + "\n" for event in result.events)


def command_log(result: SessionResult) -> str:
    return "".join(command.as_line() + "\n" for command in result.commands)


def series_frame(result: SessionResult) -> pd.DataFrame:
    """Per-sample orientation and X/Z rates, one row per sample."""
    rows = [
        (s.t_ms, o.roll_deg, o.pitch_deg, o.yaw_deg, s.gx, s.gz)
        for s, o in zip(result.samples, result.orientations)
    ]
    return pd.DataFrame(rows, columns=SERIES_COLUMNS)


def write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def write_series_csv(result: SessionResult, path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    series_frame(result).to_csv(path, index=False, float_format="%.6f")


def analyze_recording(recording: SessionRecording, run_config: Optional[RunConfig] = None,
                      model: Optional[RiskModel] = None, show_progress: bool = config.SHOW_PROGRESS) -> AnalysisReport:
    run_config = run_config or RunConfig()
    pipeline = SessionPipeline(run_config, model)
    for sample in tqdm(recording.samples, desc="Analyzing samples", unit="sample", disable=not show_progress):
        pipeline.feed(sample)
    result = pipeline.finish()
    logger.info("ANALYSIS session_id=%s steps=%d breakpoints=%d falls=%d",
                recording.metadata.session_id, len(result.steps),
                len(result.events_of(GaitEventKind.BREAKPOINT_CROSSED)),
                len(result.events_of(GaitEventKind.FALL_DETECTED)))
    return AnalysisReport(recording=recording, result=result, cadence_window_ms=config.CADENCE_WINDOW_MS)


__all__ = [
    "AnalysisReport",
    "SERIES_COLUMNS",
    "analyze_recording",
    "command_log",
    "event_log",
    "series_frame",
    "write_series_csv",
    "write_text",
]
