# src/services/detection_service.py
"""Gait event detection: breakpoint crossings, steps, cadence and falls.

Each detector is a streaming state machine fed one sample at a time; the
list-returning functions run a fresh detector over a whole stream, so
offline analysis and live processing produce the same events.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Deque, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from src import config
from src.core.types import GaitEvent, GaitEventKind
from src.errors import CalibrationError, InvalidArgumentError

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

PitchPoint = Tuple[int, float]
GyroPoint = Tuple[int, float, float]


class BreakpointConfig(BaseModel):
    theta_star_deg: float = Field(config.BREAKPOINT_THETA_STAR_DEG, gt=0.0)
    hysteresis_deg: float = Field(config.BREAKPOINT_HYSTERESIS_DEG, ge=0.0)
    min_dwell_ms: float = Field(config.BREAKPOINT_MIN_DWELL_MS, ge=0.0)


class StepDetectorConfig(BaseModel):
    peak_threshold: float = Field(config.STEP_PEAK_THRESHOLD_DPS, gt=0.0)
    refractory_ms: float = Field(config.STEP_REFRACTORY_MS, gt=0.0)
    smoothing_window: int = Field(config.STEP_SMOOTHING_WINDOW, ge=1)


class FallDetectorConfig(BaseModel):
    fall_angle_deg: float = Field(config.FALL_ANGLE_DEG, gt=0.0)
    hysteresis_deg: float = Field(config.FALL_HYSTERESIS_DEG, ge=0.0)


@dataclass(frozen=True)
class LabeledPitchRun:
    """Pitch trace of one fall run with its labeled onset."""

    pitch: Sequence[PitchPoint]
    fall_onset_ms: int


# ---------------- Breakpoint -----------------
class BreakpointDetector:
    """Fires once per excursion above theta_star held for min_dwell_ms.

    Re-arms only after pitch falls below theta_star - hysteresis.
    """

    def __init__(self, cfg: Optional[BreakpointConfig] = None):
        self.cfg = cfg or BreakpointConfig()
        self.armed = True
        self._above_since: Optional[int] = None

    def update(self, t_ms: int, pitch_deg: float) -> Optional[GaitEvent]:
        cfg = self.cfg
        if not self.armed:
            if pitch_deg < cfg.theta_star_deg - cfg.hysteresis_deg:
                self.armed = True
            else:
                return None
        if pitch_deg >= cfg.theta_star_deg:
            if self._above_since is None:
                self._above_since = t_ms
            if t_ms - self._above_since >= cfg.min_dwell_ms:
                self.armed = False
                self._above_since = None
                return GaitEvent(GaitEventKind.BREAKPOINT_CROSSED, t_ms, float(pitch_deg))
        else:
            self._above_since = None
        return None


def detect_breakpoint(stream: Iterable[PitchPoint], cfg: Optional[BreakpointConfig] = None) -> List[GaitEvent]:
    detector = BreakpointDetector(cfg)
    events = []
    for t_ms, pitch in stream:
        event = detector.update(t_ms, pitch)
        if event is not None:
            events.append(event)
    return events


def nearest_rank_percentile(values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile (no interpolation)."""
    if not values:
        raise CalibrationError("percentile of an empty set")
    if not 0 < p <= 100:
        raise InvalidArgumentError(f"percentile must lie in (0, 100], got {p}")
    ordered = sorted(values)
    rank = max(1, math.ceil(p / 100.0 * len(ordered)))
    return ordered[rank - 1]


def pitch_at(stream: Sequence[PitchPoint], t_ms: int) -> float:
    """Pitch of the last sample at or before t_ms (first sample if none)."""
    if not stream:
        raise CalibrationError("empty pitch stream")
    value = stream[0][1]
    for t, pitch in stream:
        if t > t_ms:
            break
        value = pitch
    return value


def calibrate_breakpoint(runs: Sequence[LabeledPitchRun], percentile: float = config.BREAKPOINT_PERCENTILE) -> BreakpointConfig:
    """theta_star = nearest-rank percentile of the per-run pitch at fall onset."""
    if not runs:
        raise CalibrationError("breakpoint calibration needs at least one labeled run")
    onset_pitches = [pitch_at(run.pitch, run.fall_onset_ms) for run in runs]
    theta_star = nearest_rank_percentile(onset_pitches, percentile)
    if not theta_star > 0:
        raise CalibrationError(f"calibrated breakpoint {theta_star:.3f} deg is not positive")
    logger.info("BREAKPOINT_CALIBRATED runs=%d percentile=%s theta_star=%.3f", len(runs), percentile, theta_star)
    return BreakpointConfig(theta_star_deg=theta_star)


# ---------------- Steps -----------------
class StepDetector:
    """Podometer over the smoothed X/Z angular-rate magnitude.

    A trailing moving average is reported at the centre of its window, so
    the event time of a peak is that of the sample (window - 1) // 2 places
    before the newest one. A peak must be a local maximum above threshold
    and at least refractory_ms after the previous step.
    """

    def __init__(self, cfg: Optional[StepDetectorConfig] = None):
        self.cfg = cfg or StepDetectorConfig()
        w = self.cfg.smoothing_window
        self._gx: Deque[float] = deque(maxlen=w)
        self._gz: Deque[float] = deque(maxlen=w)
        self._times: Deque[int] = deque(maxlen=w)
        self._lag = (w - 1) // 2
        # last two smoothed magnitudes with their centre times
        self._history: Deque[Tuple[int, float]] = deque(maxlen=2)
        self._last_step_t: Optional[int] = None

    def update(self, t_ms: int, gx: float, gz: float) -> Optional[GaitEvent]:
        self._gx.append(gx)
        self._gz.append(gz)
        self._times.append(t_ms)
        if len(self._times) < self.cfg.smoothing_window:
            return None
        mean_x = sum(self._gx) / len(self._gx)
        mean_z = sum(self._gz) / len(self._gz)
        magnitude = math.hypot(mean_x, mean_z)
        centre_t = self._times[-1 - self._lag]

        event = None
        if len(self._history) == 2:
            (_, before), (peak_t, peak) = self._history
            if peak > before and peak >= magnitude and peak >= self.cfg.peak_threshold:
                if self._last_step_t is None or peak_t - self._last_step_t >= self.cfg.refractory_ms:
                    self._last_step_t = peak_t
                    event = GaitEvent(GaitEventKind.STEP_DETECTED, peak_t, peak)
        self._history.append((centre_t, magnitude))
        return event


def detect_steps(stream: Iterable[GyroPoint], cfg: Optional[StepDetectorConfig] = None) -> List[GaitEvent]:
    detector = StepDetector(cfg)
    events = []
    for t_ms, gx, gz in stream:
        event = detector.update(t_ms, gx, gz)
        if event is not None:
            events.append(event)
    return events


def smoothed_magnitude(stream: Sequence[GyroPoint], smoothing_window: int = config.STEP_SMOOTHING_WINDOW) -> np.ndarray:
    if not stream:
        return np.zeros(0)
    data = np.asarray(stream, dtype=float)
    kernel = np.ones(smoothing_window) / smoothing_window
    gx = np.convolve(data[:, 1], kernel, mode="valid")
    gz = np.convolve(data[:, 2], kernel, mode="valid")
    return np.hypot(gx, gz)


def calibrate_step_threshold(stream: Sequence[GyroPoint], fraction: float = config.STEP_CALIBRATION_FRACTION,
                             smoothing_window: int = config.STEP_SMOOTHING_WINDOW) -> float:
    """peak_threshold as a fraction of the 99th percentile of the smoothed magnitude."""
    if not 0 < fraction < 1:
        raise CalibrationError(f"fraction must lie in (0, 1), got {fraction}")
    magnitude = smoothed_magnitude(stream, smoothing_window)
    if magnitude.size == 0:
        raise CalibrationError("no gyro data to calibrate the step threshold")
    threshold = float(fraction * np.percentile(magnitude, 99))
    if not threshold > 0:
        raise CalibrationError("gyro signal carries no energy; cannot calibrate step threshold")
    return threshold


def estimate_cadence(steps: Sequence[GaitEvent], window_ms: float, t_end_ms: Optional[float] = None) -> float:
    """Steps per second over the trailing window (t_end_ms - window_ms, t_end_ms] (default end: last step)."""
    if not window_ms > 0:
        raise InvalidArgumentError(f"window_ms must be positive, got {window_ms}")
    if len(steps) < 2:
        return 0.0
    end = steps[-1].t_ms if t_end_ms is None else t_end_ms
    in_window = [s for s in steps if end - window_ms < s.t_ms <= end]
    if len(in_window) < 2:
        return 0.0
    return len(in_window) / (window_ms / 1000.0)


# ---------------- Falls -----------------
class FallDetector:
    """One FallDetected per excursion beyond fall_angle_deg, valued at its peak pitch.

    The event is emitted when the excursion ends (pitch back below
    fall_angle - hysteresis) or when flush() is called at end of stream.
    """

    def __init__(self, cfg: Optional[FallDetectorConfig] = None):
        self.cfg = cfg or FallDetectorConfig()
        self._onset_t: Optional[int] = None
        self._peak = -math.inf

    def update(self, t_ms: int, pitch_deg: float) -> Optional[GaitEvent]:
        if self._onset_t is None:
            if pitch_deg >= self.cfg.fall_angle_deg:
                self._onset_t = t_ms
                self._peak = pitch_deg
            return None
        self._peak = max(self._peak, pitch_deg)
        if pitch_deg < self.cfg.fall_angle_deg - self.cfg.hysteresis_deg:
            return self.flush()
        return None

    def flush(self) -> Optional[GaitEvent]:
        if self._onset_t is None:
            return None
        event = GaitEvent(GaitEventKind.FALL_DETECTED, self._onset_t, float(self._peak))
        self._onset_t = None
        self._peak = -math.inf
        return event


def detect_fall(stream: Iterable[PitchPoint], cfg: Optional[FallDetectorConfig] = None) -> List[GaitEvent]:
    detector = FallDetector(cfg)
    events = []
    for t_ms, pitch in stream:
        event = detector.update(t_ms, pitch)
        if event is not None:
            events.append(event)
    tail = detector.flush()
    if tail is not None:
        events.append(tail)
    return events


__all__ = [
    "BreakpointConfig",
    "BreakpointDetector",
    "FallDetector",
    "FallDetectorConfig",
    "LabeledPitchRun",
    "StepDetector",
    "StepDetectorConfig",
    "calibrate_breakpoint",
    "calibrate_step_threshold",
    "detect_breakpoint",
    "detect_fall",
    "detect_steps",
    "estimate_cadence",
    "nearest_rank_percentile",
    "pitch_at",
]
