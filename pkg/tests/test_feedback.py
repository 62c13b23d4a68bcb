import numpy as np
import pytest
from pydantic import ValidationError

from src.core.types import GaitEvent, GaitEventKind, MotorCommand
from src.errors import ConfigurationError, InvalidArgumentError, UndefinedMeasureError
from src.services.feedback_service import (
    AssistFadeState,
    AssistPolicy,
    FeedbackArbiter,
    PacemakerConfig,
    RiskFeedbackConfig,
    Strategy,
    VestibularFeedbackConfig,
    assist_update,
    assist_window_success,
    pacemaker_phase_error,
    pacemaker_schedule,
    risk_feedback,
    vestibular_command,
    vestibular_frequency,
)

VF = VestibularFeedbackConfig(pitch_floor_deg=2.0, f_min_hz=1.0, f_max_hz=9.0)


def _steps(times):
    return [GaitEvent(GaitEventKind.STEP_DETECTED, t, 50.0) for t in times]


# ---------------- Vestibular -----------------
def test_vestibular_frequency_examples():
    assert vestibular_frequency(0.0, 18.0, VF) == 0.0
    assert vestibular_frequency(2.0, 18.0, VF) == 0.0
    assert vestibular_frequency(18.0, 18.0, VF) == 9.0
    assert vestibular_frequency(40.0, 18.0, VF) == 9.0
    assert vestibular_frequency(10.0, 18.0, VF) == pytest.approx(5.0)
    quadratic = VF.model_copy(update={"mapping": "quadratic"})
    assert vestibular_frequency(10.0, 18.0, quadratic) == pytest.approx(3.0)


@pytest.mark.parametrize("mapping", ["linear", "quadratic"])
def test_vestibular_frequency_is_monotone_and_bounded(mapping):
    cfg = VF.model_copy(update={"mapping": mapping})
    pitches = np.linspace(-30.0, 40.0, 10_000)
    freqs = [vestibular_frequency(float(p), 18.0, cfg) for p in pitches]
    assert all(0.0 <= f <= cfg.f_max_hz for f in freqs)
    assert all(a <= b for a, b in zip(freqs, freqs[1:]))
    inside = [f for p, f in zip(pitches, freqs) if 2.0 < p < 18.0]
    assert all(a < b for a, b in zip(inside, inside[1:]))


def test_vestibular_frequency_rejects_bad_config():
    with pytest.raises(ConfigurationError) as excinfo:
        vestibular_frequency(5.0, 2.0, VF)
    assert excinfo.value.field == "pitch_floor_deg"
    with pytest.raises(ValidationError):
        VestibularFeedbackConfig(f_min_hz=9.0, f_max_hz=1.0)


def test_vestibular_command_scales_with_gain():
    command = vestibular_command(100, 10.0, 18.0, VF, gain=0.5)
    assert command.frequency_hz == pytest.approx(5.0)
    assert command.intensity == pytest.approx(0.5)
    assert command.duration_ms == VF.update_interval_ms
    assert vestibular_command(100, 0.0, 18.0, VF).is_off


# ---------------- Pacemaker -----------------
def test_pacemaker_schedule_examples():
    assert PacemakerConfig(target_cadence_sps=2.0).period_ms == pytest.approx(500.0)

    pulses = pacemaker_schedule(PacemakerConfig(target_cadence_sps=1.8), 0, 5000)
    assert len(pulses) == 10
    assert [p.t_ms for p in pulses[:3]] == pytest.approx([0.0, 555.5555, 1111.1111], abs=1e-3)
    assert all(p.duration_ms == 100 for p in pulses)

    assert len(pacemaker_schedule(PacemakerConfig(target_cadence_sps=1.8), 1000, 300)) == 1


def test_pacemaker_schedule_counts_exact_multiples():
    pulses = pacemaker_schedule(PacemakerConfig(target_cadence_sps=2.0), 250, 2000)
    assert [p.t_ms for p in pulses] == [250, 750, 1250, 1750, 2250]


def test_pacemaker_schedule_errors():
    with pytest.raises(ValidationError):
        PacemakerConfig(target_cadence_sps=0.0)
    with pytest.raises(ValidationError):
        PacemakerConfig(target_cadence_sps=10.0, pulse_duration_ms=100.0)
    unchecked = PacemakerConfig.model_construct(target_cadence_sps=0.0, pulse_duration_ms=100.0,
                                                intensity=1.0, frequency_hz=9.0)
    with pytest.raises(ConfigurationError):
        pacemaker_schedule(unchecked, 0, 1000)
    with pytest.raises(InvalidArgumentError):
        pacemaker_schedule(PacemakerConfig(), 0, 0)


def test_phase_error_examples():
    schedule = pacemaker_schedule(PacemakerConfig(target_cadence_sps=2.0), 0, 5000)
    assert pacemaker_phase_error(_steps([0, 500, 1000]), schedule) == 0.0
    assert pacemaker_phase_error(_steps([50, 550, 1050]), schedule) == pytest.approx(50.0)
    assert pacemaker_phase_error(_steps([250, 750]), schedule) == pytest.approx(250.0)
    assert pacemaker_phase_error(_steps([260]), schedule) == pytest.approx(-240.0)
    # before the first pulse the progression is extended backwards
    assert pacemaker_phase_error(_steps([-40]), schedule) == pytest.approx(-40.0)


def test_phase_error_needs_steps_and_pulses():
    schedule = pacemaker_schedule(PacemakerConfig(), 0, 1000)
    with pytest.raises(UndefinedMeasureError):
        pacemaker_phase_error([], schedule)
    with pytest.raises(UndefinedMeasureError):
        pacemaker_phase_error(_steps([0]), [])


# ---------------- Assist as needed -----------------
def test_assist_update_examples():
    policy = AssistPolicy(decay=0.8, gain_min=0.1)
    assert assist_update(AssistFadeState(), False, policy) == AssistFadeState(gain=1.0, success_streak=0)

    state = AssistFadeState()
    for _ in range(3):
        state = assist_update(state, True, policy)
    assert state.gain == pytest.approx(0.512)
    assert state.success_streak == 3

    for _ in range(97):
        state = assist_update(state, True, policy)
    assert state.gain == pytest.approx(0.1)
    assert assist_update(state, False, policy).gain == 1.0


def test_assist_gain_stays_in_range_on_random_outcomes():
    rng = np.random.default_rng(7)
    policy = AssistPolicy()
    state = AssistFadeState()
    for outcome in rng.random(2000) < 0.7:
        previous = state
        state = assist_update(state, bool(outcome), policy)
        assert policy.gain_min <= state.gain <= 1.0
        if outcome:
            assert state.gain <= previous.gain
        else:
            assert state.gain == 1.0


def test_assist_window_success():
    assert assist_window_success(0, None, None)
    assert not assist_window_success(1, 1.8, 1.8)
    assert assist_window_success(0, 1.9, 1.8, tolerance=0.2)
    assert not assist_window_success(0, 1.0, 1.8, tolerance=0.2)
    assert not assist_window_success(0, None, 1.8)


# ---------------- Risk alert -----------------
def test_risk_feedback_examples():
    assert risk_feedback(0.0, 0.5).is_off
    full = risk_feedback(1.0, 0.5, RiskFeedbackConfig(f_max_hz=9.0), gain=1.0, t_ms=40)
    assert (full.frequency_hz, full.intensity, full.duration_ms, full.t_ms) == (9.0, 1.0, 800, 40)
    faded = risk_feedback(0.7, 0.5, RiskFeedbackConfig(f_max_hz=9.0), gain=0.5)
    assert (faded.frequency_hz, faded.intensity) == (9.0, pytest.approx(0.5))
    assert not risk_feedback(0.5, 0.5).is_off


@pytest.mark.parametrize("risk", [-0.1, 1.5, float("nan")])
def test_risk_feedback_rejects_out_of_range(risk):
    with pytest.raises(InvalidArgumentError):
        risk_feedback(risk, 0.5)


# ---------------- Arbitration -----------------
def _command(t_ms, duration_ms=100.0, frequency_hz=5.0):
    return MotorCommand(t_ms=t_ms, frequency_hz=frequency_hz, intensity=1.0, duration_ms=duration_ms)


def test_arbiter_priority_and_expiry():
    arbiter = FeedbackArbiter()
    assert arbiter.offer(Strategy.PACEMAKER, _command(0)) is not None
    assert arbiter.offer(Strategy.VESTIBULAR, _command(50)) is not None
    assert arbiter.offer(Strategy.PACEMAKER, _command(60)) is None
    assert arbiter.offer(Strategy.PACEMAKER, _command(150)) is not None
    assert arbiter.offer(Strategy.RISK, _command(200, duration_ms=800)) is not None
    assert arbiter.offer(Strategy.VESTIBULAR, _command(300)) is None
    assert arbiter.offer(Strategy.RISK, _command(400, duration_ms=800)) is not None
    assert arbiter.offer(Strategy.VESTIBULAR, _command(1200)) is not None
    assert [c.t_ms for c in arbiter.commands] == [0, 50, 150, 200, 400, 1200]


def test_arbiter_ignores_off_commands():
    arbiter = FeedbackArbiter()
    assert arbiter.offer(Strategy.RISK, MotorCommand.off(0)) is None
    assert arbiter.offer(Strategy.PACEMAKER, _command(10)) is not None
    assert arbiter.commands == [_command(10)]
