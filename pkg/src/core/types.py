# src/core/types.py
"""Domain vocabulary shared by every pipeline stage.

Body frame: X = medio-lateral (subject's left), Y = vertical (up),
Z = anterior (forward). At quiet stance the accelerometer reads (0, +1, 0) g.
Accelerometer in g, gyroscope in deg/s, all angles in degrees.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

from src.errors import InvalidArgumentError

ACCEL_FULL_SCALE_G = 16.0
GYRO_FULL_SCALE_DPS = 2000.0
SEQ_MAX = 0xFFFFFFFF

Vector3 = Tuple[float, float, float]


def wrap_angle(angle_deg: float) -> float:
    """Wrap an angle in degrees into (-180, 180]."""
    if not math.isfinite(angle_deg):
        raise InvalidArgumentError(f"angle must be finite, got {angle_deg!r}")
    wrapped = math.fmod(angle_deg, 360.0)
    if wrapped <= -180.0:
        wrapped += 360.0
    elif wrapped > 180.0:
        wrapped -= 360.0
    return wrapped


def _check_vector(name: str, values: Vector3, bound: float) -> Vector3:
    if len(values) != 3:
        raise InvalidArgumentError(f"{name} must have 3 components")
    checked = tuple(float(v) for v in values)
    for v in checked:
        if not math.isfinite(v) or abs(v) > bound:
            raise InvalidArgumentError(f"{name} component {v!r} outside ±{bound:g}")
    return checked  # type: ignore[return-value]


@dataclass(frozen=True, slots=True)
class ImuSample:
    """One timestamped 6-axis inertial reading."""

    t_ms: int
    accel: Vector3
    gyro: Vector3
    seq: int

    def __post_init__(self) -> None:
        if isinstance(self.t_ms, bool) or not isinstance(self.t_ms, int) or self.t_ms < 0:
            raise InvalidArgumentError(f"t_ms must be a non-negative integer, got {self.t_ms!r}")
        if isinstance(self.seq, bool) or not isinstance(self.seq, int) or not 0 <= self.seq <= SEQ_MAX:
            raise InvalidArgumentError(f"seq must be an unsigned 32-bit integer, got {self.seq!r}")
        object.__setattr__(self, "accel", _check_vector("accel", self.accel, ACCEL_FULL_SCALE_G))
        object.__setattr__(self, "gyro", _check_vector("gyro", self.gyro, GYRO_FULL_SCALE_DPS))

    @property
    def ax(self) -> float:
        return self.accel[0]

    @property
    def ay(self) -> float:
        return self.accel[1]

    @property
    def az(self) -> float:
        return self.accel[2]

    @property
    def gx(self) -> float:
        return self.gyro[0]

    @property
    def gy(self) -> float:
        return self.gyro[1]

    @property
    def gz(self) -> float:
        return self.gyro[2]


@dataclass(frozen=True, slots=True)
class OrientationState:
    """Complementary-filter output.

    roll about Z (coronal plane), yaw about Y (horizontal plane),
    pitch about X (sagittal plane; forward lean positive).
    """

    roll_deg: float = 0.0
    pitch_deg: float = 0.0
    yaw_deg: float = 0.0
    t_ms: int = 0

    def __post_init__(self) -> None:
        for name in ("roll_deg", "pitch_deg", "yaw_deg"):
            value = getattr(self, name)
            if not math.isfinite(value) or not -180.0 < value <= 180.0:
                raise InvalidArgumentError(f"{name}={value!r} is not a wrapped finite angle")


class GaitEventKind(str, enum.Enum):
    STEP_DETECTED = "StepDetected"
    BREAKPOINT_CROSSED = "BreakpointCrossed"
    FALL_DETECTED = "FallDetected"


@dataclass(frozen=True, slots=True)
class GaitEvent:
    """Discrete detection.

    value: step peak magnitude (deg/s) for steps, pitch at crossing for
    breakpoints, peak pitch for falls.
    """

    kind: GaitEventKind
    t_ms: int
    value: float

    def as_line(self) -> str:
        return f"{self.t_ms},{self.kind.value},{self.value!r}"


@dataclass(frozen=True, slots=True)
class MotorCommand:
    """Vibrotactile actuation request for the belly motor."""

    t_ms: float
    frequency_hz: float
    intensity: float
    duration_ms: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.frequency_hz) or self.frequency_hz < 0:
            raise InvalidArgumentError(f"frequency_hz must be >= 0, got {self.frequency_hz!r}")
        if not 0.0 <= self.intensity <= 1.0:
            raise InvalidArgumentError(f"intensity must lie in [0, 1], got {self.intensity!r}")
        if self.frequency_hz > 0 and not self.duration_ms > 0:
            raise InvalidArgumentError("duration_ms must be positive for an active command")
        if self.duration_ms < 0:
            raise InvalidArgumentError("duration_ms must be non-negative")

    @property
    def is_off(self) -> bool:
        return self.frequency_hz == 0

    @classmethod
    def off(cls, t_ms: float) -> "MotorCommand":
        return cls(t_ms=t_ms, frequency_hz=0.0, intensity=0.0, duration_ms=0.0)

    def as_line(self) -> str:
        """Simulated actuator channel line: t_ms,frequency_hz,intensity,duration_ms."""
        return f"{self.t_ms!r},{self.frequency_hz!r},{self.intensity!r},{self.duration_ms!r}"


@dataclass(frozen=True, slots=True)
class SessionMetadata:
    session_id: str
    started_at: str
    scenario: str = ""
    fall_onset_ms: Optional[int] = None
    step_times_ms: Tuple[int, ...] = ()


@dataclass(frozen=True)
class SessionRecording:
    metadata: SessionMetadata
    samples: Tuple[ImuSample, ...] = ()
    events: Tuple[GaitEvent, ...] = ()
    commands: Tuple[MotorCommand, ...] = ()
    orientations: Tuple[Optional[OrientationState], ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        for i in range(1, len(self.samples)):
            prev, cur = self.samples[i - 1], self.samples[i]
            if cur.t_ms <= prev.t_ms or cur.seq <= prev.seq:
                raise InvalidArgumentError(f"recording samples out of order at index {i}")
        for items, label in ((self.events, "events"), (self.commands, "commands")):
            for i in range(1, len(items)):
                if items[i].t_ms < items[i - 1].t_ms:
                    raise InvalidArgumentError(f"recording {label} out of order at index {i}")

    @property
    def duration_ms(self) -> int:
        if not self.samples:
            return 0
        return self.samples[-1].t_ms - self.samples[0].t_ms
