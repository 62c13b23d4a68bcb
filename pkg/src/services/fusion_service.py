# src/services/fusion_service.py
"""Complementary-filter attitude estimation.

The filter blends gyroscope integration (weight alpha) with the
accelerometer tilt angles (weight 1 - alpha). Yaw is pure gyro
integration: an accelerometer cannot observe rotation about gravity,
so yaw drifts.
"""

from __future__ import annotations

import logging
import math
from typing import Iterable, List, Optional, Tuple

from pydantic import BaseModel, Field

from src import config
from src.core.types import ImuSample, OrientationState, wrap_angle
from src.errors import DegenerateInputError, InvalidArgumentError, StreamOrderError

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())


class FilterConfig(BaseModel):
    """alpha is the gyroscope weight; nominal_rate_hz the expected sampling rate."""

    alpha: float = Field(config.FILTER_ALPHA, ge=0.0, le=1.0)
    nominal_rate_hz: float = Field(config.NOMINAL_RATE_HZ, gt=0.0)
    reinit_gap_periods: int = Field(config.REINIT_GAP_PERIODS, ge=1)

    @property
    def nominal_period_s(self) -> float:
        return 1.0 / self.nominal_rate_hz


def accel_angles(sample: ImuSample) -> Tuple[float, float]:
    """Tilt from gravity: (roll_acc, pitch_acc) in degrees."""
    ax, ay, az = sample.accel
    if ax == 0.0 and ay == 0.0 and az == 0.0:
        raise DegenerateInputError(f"zero accelerometer vector at t_ms={sample.t_ms}")
    roll = math.degrees(math.atan2(-ax, ay))
    pitch = math.degrees(math.atan2(az, math.hypot(ax, ay)))
    return roll, pitch


def complementary_update(state: OrientationState, sample: ImuSample, dt_s: float,
                         cfg: FilterConfig) -> OrientationState:
    if not dt_s > 0 or not math.isfinite(dt_s):
        raise InvalidArgumentError(f"dt_s must be positive, got {dt_s!r}")
    if sample.t_ms <= state.t_ms:
        raise StreamOrderError(f"sample t_ms={sample.t_ms} does not follow state t_ms={state.t_ms}")

    alpha = cfg.alpha
    gyro_pitch = state.pitch_deg + sample.gx * dt_s
    gyro_roll = state.roll_deg + sample.gz * dt_s
    try:
        roll_acc, pitch_acc = accel_angles(sample)
        pitch = alpha * gyro_pitch + (1.0 - alpha) * pitch_acc
        roll = alpha * gyro_roll + (1.0 - alpha) * roll_acc
    except DegenerateInputError:
        # free fall or a dead sensor; hold on the gyro
        pitch, roll = gyro_pitch, gyro_roll
    yaw = state.yaw_deg + sample.gy * dt_s
    return OrientationState(
        roll_deg=wrap_angle(roll),
        pitch_deg=wrap_angle(pitch),
        yaw_deg=wrap_angle(yaw),
        t_ms=sample.t_ms,
    )


def initial_state(sample: ImuSample, yaw_deg: float = 0.0) -> OrientationState:
    """State seeded from the accelerometer angles of one sample."""
    try:
        roll, pitch = accel_angles(sample)
    except DegenerateInputError:
        roll, pitch = 0.0, 0.0
    return OrientationState(roll_deg=wrap_angle(roll), pitch_deg=wrap_angle(pitch),
                            yaw_deg=wrap_angle(yaw_deg), t_ms=sample.t_ms)


class OrientationFilter:
    """Incremental complementary filter owned by one stream-processing task."""

    def __init__(self, cfg: Optional[FilterConfig] = None):
        self.cfg = cfg or FilterConfig()
        self.state: Optional[OrientationState] = None
        self.reinit_count = 0
        self._index = 0
        period = self.cfg.nominal_period_s
        self._dt_min = config.DT_CLAMP_MIN_FACTOR * period
        self._dt_max = config.DT_CLAMP_MAX_FACTOR * period
        self._max_gap_ms = self.cfg.reinit_gap_periods * period * 1000.0

    def reset(self) -> None:
        self.state = None
        self._index = 0

    def update(self, sample: ImuSample) -> OrientationState:
        index = self._index
        self._index += 1
        if self.state is None:
            self.state = initial_state(sample)
            return self.state

        gap_ms = sample.t_ms - self.state.t_ms
        if gap_ms <= 0:
            raise StreamOrderError(
                f"timestamp {sample.t_ms} at index {index} does not follow {self.state.t_ms}", index=index)
        if gap_ms > self._max_gap_ms:
            logger.info("FUSION_REINIT t_ms=%s gap_ms=%s", sample.t_ms, gap_ms)
            self.reinit_count += 1
            self.state = initial_state(sample, yaw_deg=self.state.yaw_deg)
            return self.state

        dt_s = min(max(gap_ms / 1000.0, self._dt_min), self._dt_max)
        self.state = complementary_update(self.state, sample, dt_s, self.cfg)
        return self.state


def run_filter(stream: Iterable[ImuSample], cfg: Optional[FilterConfig] = None) -> List[OrientationState]:
    """One OrientationState per sample; empty stream gives an empty list."""
    orientation_filter = OrientationFilter(cfg)
    return [orientation_filter.update(sample) for sample in stream]


__all__ = [
    "FilterConfig",
    "OrientationFilter",
    "accel_angles",
    "complementary_update",
    "initial_state",
    "run_filter",
]
