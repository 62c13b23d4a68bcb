# src/core/pipeline.py
"""Per-sample session processing shared by offline analysis and the live loop.

filter -> step / breakpoint / fall detectors -> windowed risk -> feedback arbiter
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

from src.core.run_config import RunConfig
from src.core.types import GaitEvent, GaitEventKind, ImuSample, MotorCommand, OrientationState, SessionMetadata, SessionRecording
from src.services.detection_service import BreakpointDetector, FallDetector, StepDetector, estimate_cadence
from src.services.feedback_service import (
    AssistFadeState,
    FeedbackArbiter,
    Strategy,
    assist_update,
    assist_window_success,
    pacemaker_pulse,
    risk_feedback,
    vestibular_command,
)
from src.services.fusion_service import OrientationFilter
from src.services.risk_model_service import RiskModel, RiskWindower, predict

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())


@dataclass
class SessionResult:
    samples: List[ImuSample] = field(default_factory=list)
    orientations: List[OrientationState] = field(default_factory=list)
    events: List[GaitEvent] = field(default_factory=list)
    commands: List[MotorCommand] = field(default_factory=list)
    risks: List[Tuple[float, float]] = field(default_factory=list)
    gains: List[Tuple[float, float]] = field(default_factory=list)

    def events_of(self, kind: GaitEventKind) -> List[GaitEvent]:
        return [e for e in self.events if e.kind == kind]

    @property
    def steps(self) -> List[GaitEvent]:
        return self.events_of(GaitEventKind.STEP_DETECTED)

    def to_recording(self, metadata: SessionMetadata,
                     orientations: Optional[Sequence[Optional[OrientationState]]] = None) -> SessionRecording:
        """Samples, events and motor commands of the session; orientations default to the host filter output."""
        angles = tuple(self.orientations) if orientations is None else tuple(orientations)
        return SessionRecording(metadata=metadata, samples=tuple(self.samples), events=tuple(self.events),
                                commands=tuple(self.commands), orientations=angles)


class SessionPipeline:
    """Single-task consumer of an ordered sample stream.

    feed() one sample at a time, then finish(). Feeding the same samples
    always yields the same events and commands, whether they came from a
    file or from the network.
    """

    def __init__(self, run_config: Optional[RunConfig] = None, model: Optional[RiskModel] = None):
        self.cfg = run_config or RunConfig()
        self.model = model
        cfg = self.cfg
        self.filter = OrientationFilter(cfg.fusion)
        self.step_detector = StepDetector(cfg.steps)
        self.breakpoint_detector = BreakpointDetector(cfg.breakpoint)
        self.fall_detector = FallDetector(cfg.fall)
        self.windower = RiskWindower(cfg.risk)
        self.arbiter = FeedbackArbiter()
        self.assist = AssistFadeState()
        self.result = SessionResult()
        self._finished = False

        self._first_t: Optional[int] = None
        self._pulse_index = 0
        self._next_vestibular_t: Optional[float] = None
        self._assist_window_end: Optional[float] = None
        self._window_breakpoints = 0

    @property
    def gain(self) -> float:
        return self.assist.gain if self.cfg.feedback.assist else 1.0

    def feed(self, sample: ImuSample) -> None:
        result = self.result
        if self._first_t is None:
            self._first_t = sample.t_ms
            self._next_vestibular_t = float(sample.t_ms)
            self._assist_window_end = sample.t_ms + self.cfg.assist.window_ms

        self._close_assist_windows(sample.t_ms)

        state = self.filter.update(sample)
        result.samples.append(sample)
        result.orientations.append(state)
        t, pitch = sample.t_ms, state.pitch_deg

        for event in (self.step_detector.update(t, sample.gx, sample.gz),
                      self.breakpoint_detector.update(t, pitch),
                      self.fall_detector.update(t, pitch)):
            if event is not None:
                self._record_event(event)

        risks = []
        for end_ms, features in self.windower.push(sample, pitch):
            if features is not None and self.model is not None:
                risk = predict(self.model, features)
                result.risks.append((end_ms, risk))
                risks.append(risk)

        self._drive_feedback(t, pitch, risks)

    def _record_event(self, event: GaitEvent) -> None:
        self.result.events.append(event)
        if event.kind == GaitEventKind.BREAKPOINT_CROSSED:
            self._window_breakpoints += 1
        logger.debug("EVENT kind=%s t_ms=%s value=%.3f", event.kind.value, event.t_ms, event.value)

    def _close_assist_windows(self, t_ms: int) -> None:
        feedback = self.cfg.feedback
        if not feedback.assist:
            return
        policy = self.cfg.assist
        while self._assist_window_end is not None and t_ms > self._assist_window_end:
            end = self._assist_window_end
            steps = [e for e in self.result.steps if end - policy.window_ms < e.t_ms <= end]
            target = self.cfg.pacemaker.target_cadence_sps if feedback.pacemaker else None
            cadence = estimate_cadence(steps, policy.window_ms, end) if steps else 0.0
            success = assist_window_success(self._window_breakpoints, cadence, target, policy.cadence_tolerance)
            self.assist = assist_update(self.assist, success, policy)
            self.result.gains.append((end, self.assist.gain))
            logger.debug("ASSIST window_end_ms=%s success=%s gain=%.4f", end, success, self.assist.gain)
            self._window_breakpoints = 0
            self._assist_window_end = end + policy.window_ms

    def _drive_feedback(self, t_ms: int, pitch_deg: float, risks: List[float]) -> None:
        feedback = self.cfg.feedback
        arbiter = self.arbiter
        gain = self.gain

        due_pulses: List[float] = []
        if feedback.pacemaker:
            period = self.cfg.pacemaker.period_ms
            while self._first_t + self._pulse_index * period <= t_ms:
                due_pulses.append(self._first_t + self._pulse_index * period)
                self._pulse_index += 1
        for pulse_t in due_pulses:
            if pulse_t < t_ms:
                arbiter.offer(Strategy.PACEMAKER, pacemaker_pulse(self.cfg.pacemaker, pulse_t, gain))

        if feedback.risk and self.model is not None:
            for risk in risks:
                arbiter.offer(Strategy.RISK, risk_feedback(risk, self.cfg.risk_alert.threshold,
                                                           self.cfg.risk_alert, gain, float(t_ms)))

        if feedback.vestibular and t_ms >= self._next_vestibular_t:
            arbiter.offer(Strategy.VESTIBULAR, vestibular_command(
                float(t_ms), pitch_deg, self.cfg.breakpoint.theta_star_deg, self.cfg.vestibular, gain))
            interval = self.cfg.vestibular.update_interval_ms
            steps_ahead = math.floor((t_ms - self._next_vestibular_t) / interval) + 1
            self._next_vestibular_t += steps_ahead * interval

        for pulse_t in due_pulses:
            if pulse_t == t_ms:
                arbiter.offer(Strategy.PACEMAKER, pacemaker_pulse(self.cfg.pacemaker, pulse_t, gain))

    def feed_all(self, samples: Iterable[ImuSample]) -> "SessionPipeline":
        for sample in samples:
            self.feed(sample)
        return self

    def finish(self) -> SessionResult:
        if not self._finished:
            tail = self.fall_detector.flush()
            if tail is not None:
                self._record_event(tail)
            self._finished = True
            # a fall is reported when its excursion ends, so restore time order
            self.result.events.sort(key=lambda e: e.t_ms)
            self.result.commands = list(self.arbiter.commands)
            logger.info("SESSION_DONE samples=%d events=%d commands=%d filter_reinits=%d",
                        len(self.result.samples), len(self.result.events),
                        len(self.result.commands), self.filter.reinit_count)
        return self.result


def process_session(samples: Iterable[ImuSample], run_config: Optional[RunConfig] = None,
                    model: Optional[RiskModel] = None) -> SessionResult:
    return SessionPipeline(run_config, model).feed_all(samples).finish()


__all__ = ["SessionPipeline", "SessionResult", "process_session"]
