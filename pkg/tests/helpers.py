import math
from typing import List, Sequence

from src.core.types import ImuSample, SessionMetadata, SessionRecording


def gravity(roll_deg: float = 0.0, pitch_deg: float = 0.0):
    """Accelerometer reading at rest for the given attitude."""
    r, p = math.radians(roll_deg), math.radians(pitch_deg)
    return (-math.sin(r) * math.cos(p), math.cos(r) * math.cos(p), math.sin(p))


def make_sample(t_ms: int, accel=(0.0, 1.0, 0.0), gyro=(0.0, 0.0, 0.0), seq=None) -> ImuSample:
    return ImuSample(t_ms=t_ms, accel=tuple(accel), gyro=tuple(gyro), seq=t_ms // 10 if seq is None else seq)


def static_stream(count: int, period_ms: int = 10, start_ms: int = 0, **kwargs) -> List[ImuSample]:
    return [make_sample(start_ms + i * period_ms, seq=i, **kwargs) for i in range(count)]


def recording_of(samples: Sequence[ImuSample], fall_onset_ms=None, scenario: str = "test") -> SessionRecording:
    metadata = SessionMetadata(session_id="test", started_at="1970-01-01T00:00:00+00:00",
                               scenario=scenario, fall_onset_ms=fall_onset_ms)
    return SessionRecording(metadata=metadata, samples=tuple(samples))
