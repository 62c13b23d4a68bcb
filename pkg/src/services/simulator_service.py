# src/services/simulator_service.py
"""Synthetic vest sessions with known ground truth.

Three session kinds mirror the balance experiments:
  - gait: straight-line walking, one angular-rate burst per step on gx/gz
  - lean_fall: a slow forward lean that runs away into a fall past the instability angle
  - walk_then_fall: a gait segment followed by a lean fall on one continuous clock

Angles are built first and the gyroscope channels are their exact rates
on the sample grid, so a complementary filter fed the clean stream
tracks the true angles. The accelerometer reads the gravity direction
for those angles. All six channels are rounded to float32 so recordings
and UDP packets carry them losslessly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator
from tqdm import tqdm

from src import config
from src.core.types import ACCEL_FULL_SCALE_G, GYRO_FULL_SCALE_DPS, ImuSample, SessionMetadata, SessionRecording
from src.services.rng_utils import Xorshift64Star

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

ScenarioKind = Literal["gait", "lean_fall", "walk_then_fall"]
SCENARIO_KINDS: Tuple[str, ...] = ("gait", "lean_fall", "walk_then_fall")


class GaitScenario(BaseModel):
    cadence_sps: float = Field(1.4, gt=0.0)
    stride_rate_amplitude: float = Field(80.0, gt=0.0, description="peak gx burst, deg/s")
    duration_ms: int = Field(5000, gt=0)
    accel_noise_std: float = Field(0.01, ge=0.0)
    gyro_noise_std: float = Field(1.0, ge=0.0)
    rate_hz: float = Field(config.SIM_RATE_HZ, gt=0.0, le=1000.0)
    burst_width_fraction: float = Field(0.4, gt=0.0, le=1.0)
    bounce_g: float = Field(0.05, ge=0.0)


class LeanFallScenario(BaseModel):
    """Forward lean that runs away into a fall.

    Each seeded run draws its own instability angle from a triangular
    distribution on theta_fall_deg +/- theta_fall_spread_deg; a spread of
    0 puts every run at exactly theta_fall_deg.
    """

    lean_rate_dps: float = Field(5.0, gt=0.0)
    theta_fall_deg: float = Field(20.0, gt=0.0)
    theta_fall_spread_deg: float = Field(config.SIM_THETA_FALL_SPREAD_DEG, ge=0.0)
    collapse_duration_ms: float = Field(500.0, gt=0.0)
    fall_pitch_deg: float = Field(80.0, gt=0.0, lt=90.0)
    duration_ms: int = Field(8000, gt=0)
    accel_noise_std: float = Field(0.01, ge=0.0)
    gyro_noise_std: float = Field(1.0, ge=0.0)
    rate_hz: float = Field(config.SIM_RATE_HZ, gt=0.0, le=1000.0)

    @model_validator(mode="after")
    def _check_angles(self) -> "LeanFallScenario":
        if not self.fall_pitch_deg > self.theta_fall_deg + self.theta_fall_spread_deg:
            raise ValueError("fall_pitch_deg must exceed theta_fall_deg + theta_fall_spread_deg")
        if not self.theta_fall_deg > self.theta_fall_spread_deg:
            raise ValueError("theta_fall_spread_deg must stay below theta_fall_deg")
        return self


class SimulationScenario(BaseModel):
    kind: ScenarioKind = "gait"
    gait: GaitScenario = Field(default_factory=GaitScenario)
    fall: LeanFallScenario = Field(default_factory=LeanFallScenario)


@dataclass(frozen=True)
class GroundTruth:
    step_times_ms: Tuple[int, ...] = ()
    fall_onset_ms: Optional[int] = None
    instability_ms: Optional[int] = None
    impact_ms: Optional[int] = None
    instability_deg: Optional[float] = None
    pitch_deg: Tuple[float, ...] = field(default=(), compare=False, repr=False)


@dataclass
class _Kinematics:
    t_ms: np.ndarray
    roll: np.ndarray
    pitch: np.ndarray
    yaw: np.ndarray
    gx: np.ndarray
    gy: np.ndarray
    gz: np.ndarray
    bounce: np.ndarray

    @classmethod
    def concat(cls, parts: Sequence["_Kinematics"]) -> "_Kinematics":
        return cls(*(np.concatenate([getattr(p, name) for p in parts])
                     for name in ("t_ms", "roll", "pitch", "yaw", "gx", "gy", "gz", "bounce")))


def sample_count(duration_ms: float, rate_hz: float) -> int:
    return max(1, math.floor(duration_ms * rate_hz / 1000.0 + 1e-9))


def time_grid(start_index: int, count: int, rate_hz: float) -> np.ndarray:
    """Sample k sits at round(k * 1000 / rate_hz) ms."""
    k = np.arange(start_index, start_index + count, dtype=np.float64)
    return np.floor(k * 1000.0 / rate_hz + 0.5).astype(np.int64)


def _integrate(rate: np.ndarray, t_ms: np.ndarray, start: float) -> np.ndarray:
    dt = np.diff(t_ms) / 1000.0
    return start + np.concatenate([[0.0], np.cumsum(rate[1:] * dt)])


def _gait_kinematics(sc: GaitScenario, start_index: int = 0) -> Tuple[_Kinematics, Tuple[int, ...]]:
    n = sample_count(sc.duration_ms, sc.rate_hz)
    t_ms = time_grid(start_index, n, sc.rate_hz)
    t_rel = (t_ms - t_ms[0]) / 1000.0
    period = 1.0 / sc.cadence_sps
    width = sc.burst_width_fraction * period
    n_steps = math.floor(sc.cadence_sps * sc.duration_ms / 1000.0 + 1e-9)

    bursts = np.zeros(n)
    signed = np.zeros(n)
    step_times = []
    for k in range(n_steps):
        centre = (k + 0.5) * period
        phase = (t_rel - centre) / width
        burst = np.where(np.abs(phase) < 0.5, 0.5 * (1.0 + np.cos(2.0 * np.pi * phase)), 0.0)
        bursts += burst
        signed += burst if k % 2 == 0 else -burst
        nearest = min(n - 1, math.floor(centre * sc.rate_hz + 0.5))
        step_times.append(int(t_ms[nearest]))

    raw_gx = sc.stride_rate_amplitude * bursts
    dt = np.diff(t_ms) / 1000.0
    # zero net pitch over the segment
    offset = float(np.sum(raw_gx[1:] * dt) / np.sum(dt)) if n > 1 else 0.0
    gx = raw_gx - offset
    gz = 0.5 * sc.stride_rate_amplitude * signed
    gy = 0.2 * sc.stride_rate_amplitude * signed

    pitch = _integrate(gx, t_ms, 0.0)
    roll = _integrate(gz, t_ms, 0.0)
    yaw = _integrate(gy, t_ms, 0.0)
    roll -= (roll.max() + roll.min()) / 2.0
    yaw -= (yaw.max() + yaw.min()) / 2.0
    kin = _Kinematics(t_ms, roll, pitch, yaw, gx, gy, gz, sc.bounce_g * bursts)
    return kin, tuple(step_times)


def _lean_pitch(sc: LeanFallScenario, t_rel_s: np.ndarray, falls: bool) -> np.ndarray:
    ramp = sc.lean_rate_dps * t_rel_s
    if not falls:
        return np.minimum(ramp, sc.fall_pitch_deg)
    t_cross = sc.theta_fall_deg / sc.lean_rate_dps
    collapse_s = sc.collapse_duration_ms / 1000.0
    extra = max(0.0, sc.fall_pitch_deg - sc.theta_fall_deg - sc.lean_rate_dps * collapse_s)
    since = np.clip(t_rel_s - t_cross, 0.0, collapse_s)
    tau = since / collapse_s
    collapse = sc.theta_fall_deg + sc.lean_rate_dps * since + extra * tau ** 2
    pitch = np.where(t_rel_s <= t_cross, ramp, collapse)
    return np.minimum(pitch, sc.fall_pitch_deg)


def _lean_kinematics(sc: LeanFallScenario, start_index: int = 0, origin_ms: Optional[int] = None,
                     roll0: float = 0.0, yaw0: float = 0.0) -> Tuple[_Kinematics, GroundTruth]:
    """Lean measured from origin_ms (default: first sample), where pitch is 0."""
    n = sample_count(sc.duration_ms, sc.rate_hz)
    t_ms = time_grid(start_index, n, sc.rate_hz)
    origin = int(t_ms[0]) if origin_ms is None else origin_ms
    t_rel = (t_ms - origin) / 1000.0
    crossing_rel_ms = sc.theta_fall_deg / sc.lean_rate_dps * 1000.0
    falls = crossing_rel_ms < sc.duration_ms
    pitch = _lean_pitch(sc, t_rel, falls)

    previous_t = np.concatenate([[origin], t_ms[:-1]])
    previous_pitch = np.concatenate([[0.0], pitch[:-1]])
    dt = (t_ms - previous_t) / 1000.0
    with np.errstate(divide="ignore", invalid="ignore"):
        gx = np.where(dt > 0, (pitch - previous_pitch) / np.where(dt > 0, dt, 1.0), sc.lean_rate_dps)

    zeros = np.zeros(n)
    kin = _Kinematics(t_ms, zeros + roll0, pitch, zeros + yaw0, gx, zeros.copy(), zeros.copy(), zeros.copy())
    truth = GroundTruth()
    if falls:
        crossing = int(math.floor(origin + crossing_rel_ms + 0.5))
        truth = GroundTruth(
            fall_onset_ms=crossing,
            instability_ms=crossing,
            impact_ms=int(math.floor(origin + crossing_rel_ms + sc.collapse_duration_ms + 0.5)),
        )
    return kin, truth


def _to_samples(kin: _Kinematics, accel_noise_std: Sequence[float], gyro_noise_std: Sequence[float],
                rng: Xorshift64Star, seq0: int = 0) -> List[ImuSample]:
    roll = np.radians(kin.roll)
    pitch = np.radians(kin.pitch)
    ax = -np.sin(roll) * np.cos(pitch)
    ay = np.cos(roll) * np.cos(pitch) + kin.bounce
    az = np.sin(pitch)
    clean = np.column_stack([ax, ay, az, kin.gx, kin.gy, kin.gz])

    n = clean.shape[0]
    noise = np.asarray(rng.normals(6 * n), dtype=np.float64).reshape(n, 6)
    std = np.column_stack([np.repeat(np.asarray(accel_noise_std, dtype=np.float64)[:, None], 3, axis=1),
                           np.repeat(np.asarray(gyro_noise_std, dtype=np.float64)[:, None], 3, axis=1)])
    values = clean + noise * std
    values[:, :3] = np.clip(values[:, :3], -ACCEL_FULL_SCALE_G, ACCEL_FULL_SCALE_G)
    values[:, 3:] = np.clip(values[:, 3:], -GYRO_FULL_SCALE_DPS, GYRO_FULL_SCALE_DPS)
    rows = values.astype(np.float32).tolist()
    times = kin.t_ms.tolist()
    return [
        ImuSample(t_ms=int(times[i]), accel=tuple(rows[i][:3]), gyro=tuple(rows[i][3:]), seq=seq0 + i)
        for i in range(n)
    ]


def gen_gait(scenario: GaitScenario, seed: int) -> Tuple[List[ImuSample], GroundTruth]:
    rng = Xorshift64Star(seed)
    kin, steps = _gait_kinematics(scenario)
    n = kin.t_ms.size
    samples = _to_samples(kin, [scenario.accel_noise_std] * n, [scenario.gyro_noise_std] * n, rng)
    return samples, GroundTruth(step_times_ms=steps, pitch_deg=tuple(kin.pitch.tolist()))


def draw_instability(scenario: LeanFallScenario, rng: Xorshift64Star) -> LeanFallScenario:
    """Scenario with this run's instability angle fixed; draws nothing when the spread is 0."""
    if scenario.theta_fall_spread_deg == 0:
        return scenario
    offset = rng.uniform() + rng.uniform() - 1.0
    theta = scenario.theta_fall_deg + scenario.theta_fall_spread_deg * offset
    return scenario.model_copy(update={"theta_fall_deg": theta, "theta_fall_spread_deg": 0.0})


def gen_lean_fall(scenario: LeanFallScenario, seed: int) -> Tuple[List[ImuSample], GroundTruth]:
    rng = Xorshift64Star(seed)
    scenario = draw_instability(scenario, rng)
    kin, truth = _lean_kinematics(scenario)
    n = kin.t_ms.size
    samples = _to_samples(kin, [scenario.accel_noise_std] * n, [scenario.gyro_noise_std] * n, rng)
    return samples, GroundTruth(
        fall_onset_ms=truth.fall_onset_ms,
        instability_ms=truth.instability_ms,
        impact_ms=truth.impact_ms,
        instability_deg=scenario.theta_fall_deg if truth.fall_onset_ms is not None else None,
        pitch_deg=tuple(kin.pitch.tolist()),
    )


def gen_walk_then_fall(gait: GaitScenario, fall: LeanFallScenario, seed: int) -> Tuple[List[ImuSample], GroundTruth]:
    """Gait segment, then a lean fall starting from where the walk ended."""
    rng = Xorshift64Star(seed)
    fall = draw_instability(fall, rng)
    if fall.rate_hz != gait.rate_hz:
        fall = fall.model_copy(update={"rate_hz": gait.rate_hz})
    walk, steps = _gait_kinematics(gait)
    n_walk = walk.t_ms.size
    lean, truth = _lean_kinematics(
        fall,
        start_index=n_walk,
        origin_ms=int(walk.t_ms[-1]),
        roll0=float(walk.roll[-1]),
        yaw0=float(walk.yaw[-1]),
    )
    lean.pitch = lean.pitch + walk.pitch[-1]
    kin = _Kinematics.concat([walk, lean])
    n_lean = lean.t_ms.size
    accel_std = [gait.accel_noise_std] * n_walk + [fall.accel_noise_std] * n_lean
    gyro_std = [gait.gyro_noise_std] * n_walk + [fall.gyro_noise_std] * n_lean
    samples = _to_samples(kin, accel_std, gyro_std, rng)
    return samples, GroundTruth(
        step_times_ms=steps,
        fall_onset_ms=truth.fall_onset_ms,
        instability_ms=truth.instability_ms,
        impact_ms=truth.impact_ms,
        instability_deg=fall.theta_fall_deg if truth.fall_onset_ms is not None else None,
        pitch_deg=tuple(kin.pitch.tolist()),
    )


@dataclass(frozen=True)
class SimulatedRun:
    scenario: SimulationScenario
    seed: int
    samples: Tuple[ImuSample, ...]
    truth: GroundTruth

    def metadata(self) -> SessionMetadata:
        return SessionMetadata(
            session_id=f"sim-{self.scenario.kind}-seed{self.seed}",
            started_at=config.SIM_SESSION_EPOCH,
            scenario=self.scenario.kind,
            fall_onset_ms=self.truth.fall_onset_ms,
            step_times_ms=self.truth.step_times_ms,
        )

    def to_recording(self) -> SessionRecording:
        return SessionRecording(metadata=self.metadata(), samples=self.samples)


def simulate(scenario: SimulationScenario, seed: int) -> SimulatedRun:
    if scenario.kind == "gait":
        samples, truth = gen_gait(scenario.gait, seed)
    elif scenario.kind == "lean_fall":
        samples, truth = gen_lean_fall(scenario.fall, seed)
    else:
        samples, truth = gen_walk_then_fall(scenario.gait, scenario.fall, seed)
    logger.debug("SIMULATED kind=%s seed=%d samples=%d onset_ms=%s steps=%d",
                 scenario.kind, seed, len(samples), truth.fall_onset_ms, len(truth.step_times_ms))
    return SimulatedRun(scenario=scenario, seed=seed, samples=tuple(samples), truth=truth)


def simulate_batch(runs: Sequence[Tuple[SimulationScenario, int]],
                   show_progress: bool = config.SHOW_PROGRESS) -> List[SimulatedRun]:
    """Repeated-run protocol: one simulated session per (scenario, seed) pair."""
    return [simulate(scenario, seed)
            for scenario, seed in tqdm(runs, desc="Simulating runs", disable=not show_progress)]


__all__ = [
    "GaitScenario",
    "GroundTruth",
    "LeanFallScenario",
    "SCENARIO_KINDS",
    "SimulatedRun",
    "SimulationScenario",
    "draw_instability",
    "gen_gait",
    "gen_lean_fall",
    "gen_walk_then_fall",
    "sample_count",
    "simulate",
    "simulate_batch",
    "time_grid",
]
