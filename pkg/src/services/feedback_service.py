# src/services/feedback_service.py
"""Vibrotactile stimulation strategies and their arbitration.

Three strategies drive the single belly motor:
  - artificial vestibular feedback: pulse rate rises as pitch nears the breakpoint
  - gait pacemaker: a metronome of pulses at the target cadence
  - risk alert: a fixed alert pattern when predicted fall risk crosses a threshold
An assist-as-needed gain fades stimulation while the wearer performs well.
When several are active only the highest priority one reaches the motor:
risk > vestibular > pacemaker.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence

from pydantic import BaseModel, Field, model_validator

from src import config
from src.core.types import GaitEvent, MotorCommand
from src.errors import ConfigurationError, InvalidArgumentError, UndefinedMeasureError

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())


class VestibularFeedbackConfig(BaseModel):
    pitch_floor_deg: float = Field(config.VF_PITCH_FLOOR_DEG, ge=0.0)
    f_min_hz: float = Field(config.VF_F_MIN_HZ, gt=0.0)
    f_max_hz: float = Field(config.VF_F_MAX_HZ, gt=0.0)
    mapping: Literal["linear", "quadratic"] = "linear"
    intensity: float = Field(1.0, ge=0.0, le=1.0)
    update_interval_ms: float = Field(config.VF_UPDATE_INTERVAL_MS, gt=0.0)

    @model_validator(mode="after")
    def _check_range(self) -> "VestibularFeedbackConfig":
        if not self.f_min_hz < self.f_max_hz:
            raise ValueError("f_min_hz must be below f_max_hz")
        return self


class PacemakerConfig(BaseModel):
    target_cadence_sps: float = Field(config.PACEMAKER_CADENCE_SPS, gt=0.0)
    pulse_duration_ms: float = Field(config.PACEMAKER_PULSE_MS, gt=0.0)
    intensity: float = Field(1.0, ge=0.0, le=1.0)
    frequency_hz: float = Field(config.VF_F_MAX_HZ, gt=0.0)

    @model_validator(mode="after")
    def _check_pulse_fits(self) -> "PacemakerConfig":
        if not self.pulse_duration_ms < 1000.0 / self.target_cadence_sps:
            raise ValueError("pulse_duration_ms must be shorter than the pacing period")
        return self

    @property
    def period_ms(self) -> float:
        return 1000.0 / self.target_cadence_sps


class AssistPolicy(BaseModel):
    decay: float = Field(config.ASSIST_DECAY, gt=0.0, le=1.0)
    gain_min: float = Field(config.ASSIST_GAIN_MIN, ge=0.0, le=1.0)
    window_ms: float = Field(config.ASSIST_WINDOW_MS, gt=0.0)
    cadence_tolerance: float = Field(config.ASSIST_CADENCE_TOLERANCE, ge=0.0)


class RiskFeedbackConfig(BaseModel):
    threshold: float = Field(config.RISK_ALERT_THRESHOLD, ge=0.0, le=1.0)
    f_max_hz: float = Field(config.VF_F_MAX_HZ, gt=0.0)
    intensity: float = Field(1.0, ge=0.0, le=1.0)
    duration_ms: float = Field(config.RISK_ALERT_DURATION_MS, gt=0.0)


@dataclass(frozen=True)
class AssistFadeState:
    gain: float = 1.0
    success_streak: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.gain <= 1.0:
            raise InvalidArgumentError(f"gain must lie in [0, 1], got {self.gain}")
        if self.success_streak < 0:
            raise InvalidArgumentError("success_streak must be non-negative")


# ---------------- Artificial vestibular feedback -----------------
def vestibular_frequency(pitch_deg: float, theta_star_deg: float, cfg: VestibularFeedbackConfig) -> float:
    """Pulse rate that rises as pitch approaches the breakpoint."""
    floor = cfg.pitch_floor_deg
    if not theta_star_deg > floor:
        raise ConfigurationError(
            f"theta_star {theta_star_deg} must exceed pitch_floor {floor}", field="pitch_floor_deg")
    if not cfg.f_min_hz < cfg.f_max_hz:
        raise ConfigurationError("f_min_hz must be below f_max_hz", field="f_min_hz")
    if pitch_deg <= floor:
        return 0.0
    if pitch_deg >= theta_star_deg:
        return cfg.f_max_hz
    u = (pitch_deg - floor) / (theta_star_deg - floor)
    k = 1 if cfg.mapping == "linear" else 2
    return cfg.f_min_hz + (cfg.f_max_hz - cfg.f_min_hz) * u ** k


def vestibular_command(t_ms: float, pitch_deg: float, theta_star_deg: float,
                       cfg: VestibularFeedbackConfig, gain: float = 1.0) -> MotorCommand:
    frequency = vestibular_frequency(pitch_deg, theta_star_deg, cfg)
    if frequency == 0:
        return MotorCommand.off(t_ms)
    return MotorCommand(t_ms=t_ms, frequency_hz=frequency, intensity=cfg.intensity * gain,
                        duration_ms=cfg.update_interval_ms)


# ---------------- Gait pacemaker -----------------
def _checked_period(cfg: PacemakerConfig) -> float:
    if not cfg.target_cadence_sps > 0:
        raise ConfigurationError("target_cadence_sps must be positive", field="target_cadence_sps")
    return 1000.0 / cfg.target_cadence_sps


def pacemaker_pulse(cfg: PacemakerConfig, t_ms: float, gain: float = 1.0) -> MotorCommand:
    return MotorCommand(t_ms=t_ms, frequency_hz=cfg.frequency_hz, intensity=cfg.intensity * gain,
                        duration_ms=cfg.pulse_duration_ms)


def pacemaker_schedule(cfg: PacemakerConfig, start_t_ms: float, horizon_ms: float) -> List[MotorCommand]:
    """floor(horizon / period) + 1 pulses, the first at start_t_ms."""
    period = _checked_period(cfg)
    if not horizon_ms > 0:
        raise InvalidArgumentError(f"horizon_ms must be positive, got {horizon_ms}")
    # horizon * cadence avoids the rounding of horizon / (1000 / cadence)
    count = math.floor(horizon_ms * cfg.target_cadence_sps / 1000.0 + 1e-9) + 1
    return [pacemaker_pulse(cfg, start_t_ms + i * period) for i in range(count)]


def pacemaker_phase_error(steps: Sequence[GaitEvent], schedule: Sequence[MotorCommand]) -> float:
    """Mean signed offset (ms) of each step to its nearest pulse, in (-period/2, period/2].

    The schedule is treated as a periodic progression; an exact tie maps to +period/2.
    """
    if not steps or not schedule:
        raise UndefinedMeasureError("phase error needs at least one step and one pulse")
    start = schedule[0].t_ms
    if len(schedule) == 1:
        return sum(s.t_ms - start for s in steps) / len(steps)
    period = schedule[1].t_ms - start
    half = period / 2.0
    offsets = []
    for step in steps:
        index = math.ceil((step.t_ms - start) / period - 0.5)
        offset = step.t_ms - (start + index * period)
        if offset <= -half:
            offset += period
        elif offset > half:
            offset -= period
        offsets.append(offset)
    return sum(offsets) / len(offsets)


# ---------------- Assist as needed -----------------
def assist_update(state: AssistFadeState, window_success: bool, policy: Optional[AssistPolicy] = None) -> AssistFadeState:
    policy = policy or AssistPolicy()
    if not window_success:
        return AssistFadeState(gain=1.0, success_streak=0)
    streak = state.success_streak + 1
    return AssistFadeState(gain=max(policy.gain_min, policy.decay ** streak), success_streak=streak)


def assist_window_success(breakpoint_count: int, cadence_sps: Optional[float],
                          target_cadence_sps: Optional[float], tolerance: float = config.ASSIST_CADENCE_TOLERANCE) -> bool:
    """No breakpoint events and, when a target is set, cadence within +-tolerance of it."""
    if breakpoint_count > 0:
        return False
    if target_cadence_sps is None:
        return True
    if cadence_sps is None:
        return False
    return abs(cadence_sps - target_cadence_sps) <= tolerance * target_cadence_sps


# ---------------- Risk predictor feedback -----------------
def risk_feedback(risk: float, threshold: float, cfg: Optional[RiskFeedbackConfig] = None,
                  gain: float = 1.0, t_ms: float = 0.0) -> MotorCommand:
    cfg = cfg or RiskFeedbackConfig()
    if not math.isfinite(risk) or not 0.0 <= risk <= 1.0:
        raise InvalidArgumentError(f"risk must lie in [0, 1], got {risk!r}")
    if risk < threshold:
        return MotorCommand.off(t_ms)
    return MotorCommand(t_ms=t_ms, frequency_hz=cfg.f_max_hz, intensity=cfg.intensity * gain,
                        duration_ms=cfg.duration_ms)


# ---------------- Arbitration -----------------
class Strategy(enum.IntEnum):
    PACEMAKER = 1
    VESTIBULAR = 2
    RISK = 3


class FeedbackArbiter:
    """Single owner of the motor channel.

    A candidate is emitted unless a strictly higher-priority command is
    still running; an emitted command replaces whatever was running.
    """

    def __init__(self):
        self.commands: List[MotorCommand] = []
        self._active: Optional[MotorCommand] = None
        self._active_strategy: Optional[Strategy] = None

    def _active_at(self, t_ms: float) -> Optional[Strategy]:
        if self._active is None:
            return None
        if t_ms >= self._active.t_ms + self._active.duration_ms:
            self._active = None
            self._active_strategy = None
            return None
        return self._active_strategy

    def offer(self, strategy: Strategy, command: MotorCommand) -> Optional[MotorCommand]:
        if command.is_off:
            return None
        running = self._active_at(command.t_ms)
        if running is not None and running > strategy:
            return None
        self._active = command
        self._active_strategy = strategy
        self.commands.append(command)
        logger.debug("FEEDBACK kind=%s t_ms=%s frequency_hz=%s intensity=%s",
                     strategy.name.lower(), command.t_ms, command.frequency_hz, command.intensity)
        return command


__all__ = [
    "AssistFadeState",
    "AssistPolicy",
    "FeedbackArbiter",
    "PacemakerConfig",
    "RiskFeedbackConfig",
    "Strategy",
    "VestibularFeedbackConfig",
    "assist_update",
    "assist_window_success",
    "pacemaker_phase_error",
    "pacemaker_pulse",
    "pacemaker_schedule",
    "risk_feedback",
    "vestibular_command",
    "vestibular_frequency",
]
