import pytest

from src.core.types import OrientationState
from src.errors import DegenerateInputError, InvalidArgumentError, StreamOrderError
from src.services.fusion_service import (
    FilterConfig,
    OrientationFilter,
    accel_angles,
    complementary_update,
    initial_state,
    run_filter,
)
from src.services.simulator_service import gen_lean_fall
from tests.helpers import gravity, make_sample, static_stream

DT = 0.01


def test_accel_angles_recover_attitude():
    roll, pitch = accel_angles(make_sample(0, accel=gravity(10.0, 20.0)))
    assert roll == pytest.approx(10.0, abs=1e-9)
    assert pitch == pytest.approx(20.0, abs=1e-9)


def test_accel_angles_zero_vector():
    with pytest.raises(DegenerateInputError):
        accel_angles(make_sample(0, accel=(0.0, 0.0, 0.0)))


def test_static_input_is_a_fixed_point():
    cfg = FilterConfig()
    state = OrientationState(roll_deg=10.0, pitch_deg=20.0, yaw_deg=5.0, t_ms=0)
    for i in range(1, 201):
        state = complementary_update(state, make_sample(i * 10, accel=gravity(10.0, 20.0)), DT, cfg)
    assert state.roll_deg == pytest.approx(10.0, abs=1e-9)
    assert state.pitch_deg == pytest.approx(20.0, abs=1e-9)
    assert state.yaw_deg == pytest.approx(5.0, abs=1e-9)


def test_error_decays_geometrically():
    cfg = FilterConfig(alpha=0.98)
    initial_error = 10.0
    state = OrientationState(roll_deg=0.0, pitch_deg=initial_error, t_ms=0)
    for n in range(1, 201):
        state = complementary_update(state, make_sample(n * 10), DT, cfg)
        assert state.pitch_deg == pytest.approx(initial_error * 0.98 ** n, abs=1e-9)


def test_alpha_extremes():
    sample = make_sample(10, accel=gravity(0.0, 30.0), gyro=(50.0, 0.0, -20.0))
    state = OrientationState(roll_deg=1.0, pitch_deg=2.0, t_ms=0)

    gyro_only = complementary_update(state, sample, DT, FilterConfig(alpha=1.0))
    assert gyro_only.pitch_deg == pytest.approx(2.0 + 50.0 * DT)
    assert gyro_only.roll_deg == pytest.approx(1.0 - 20.0 * DT)

    accel_only = complementary_update(state, sample, DT, FilterConfig(alpha=0.0))
    assert accel_only.pitch_deg == pytest.approx(30.0)
    assert accel_only.roll_deg == pytest.approx(0.0, abs=1e-9)


def test_yaw_integrates_gyro_and_wraps():
    state = OrientationState(yaw_deg=179.0, t_ms=0)
    updated = complementary_update(state, make_sample(10, gyro=(0.0, 200.0, 0.0)), DT, FilterConfig())
    assert updated.yaw_deg == pytest.approx(-179.0)


def test_update_rejects_bad_dt_and_order():
    state = OrientationState(t_ms=100)
    with pytest.raises(InvalidArgumentError):
        complementary_update(state, make_sample(110), 0.0, FilterConfig())
    with pytest.raises(StreamOrderError):
        complementary_update(state, make_sample(90), DT, FilterConfig())
    with pytest.raises(StreamOrderError):
        complementary_update(state, make_sample(100), DT, FilterConfig())


def test_degenerate_accel_holds_on_gyro():
    state = OrientationState(pitch_deg=5.0, t_ms=0)
    updated = complementary_update(state, make_sample(10, accel=(0.0, 0.0, 0.0), gyro=(10.0, 0.0, 0.0)),
                                   DT, FilterConfig())
    assert updated.pitch_deg == pytest.approx(5.1)


def test_run_filter_matches_incremental_filter():
    samples = static_stream(50, accel=gravity(3.0, 12.0), gyro=(1.0, 2.0, 3.0))
    batch = run_filter(samples)
    incremental = OrientationFilter()
    assert [incremental.update(s) for s in samples] == batch
    assert batch[0] == initial_state(samples[0])
    assert run_filter([]) == []


def test_run_filter_reports_out_of_order_index():
    samples = [make_sample(0, seq=0), make_sample(10, seq=1), make_sample(5, seq=2)]
    with pytest.raises(StreamOrderError) as excinfo:
        run_filter(samples)
    assert excinfo.value.index == 2
    repeated = [make_sample(0, seq=0), make_sample(10, seq=1), make_sample(10, seq=2)]
    with pytest.raises(StreamOrderError) as excinfo:
        run_filter(repeated)
    assert excinfo.value.index == 2


def test_long_gap_reinitializes_but_keeps_yaw():
    orientation_filter = OrientationFilter()
    orientation_filter.update(make_sample(0, gyro=(0.0, 100.0, 0.0), seq=0))
    before = orientation_filter.update(make_sample(10, gyro=(0.0, 100.0, 0.0), seq=1))
    assert before.yaw_deg == pytest.approx(1.0)
    after = orientation_filter.update(make_sample(1000, accel=gravity(0.0, 25.0), seq=2))
    assert orientation_filter.reinit_count == 1
    assert after.pitch_deg == pytest.approx(25.0)
    assert after.yaw_deg == pytest.approx(1.0)


def test_small_jitter_is_clamped():
    orientation_filter = OrientationFilter(FilterConfig(alpha=1.0))
    orientation_filter.update(make_sample(0, seq=0))
    state = orientation_filter.update(make_sample(2, gyro=(100.0, 0.0, 0.0), seq=1))
    # 2 ms gap is clamped to half the nominal 10 ms period
    assert state.pitch_deg == pytest.approx(0.5)


def test_static_stream_stays_level():
    states = run_filter(static_stream(1000))
    assert len(states) == 1000
    assert all((s.roll_deg, s.pitch_deg, s.yaw_deg) == (0.0, 0.0, 0.0) for s in states)


def test_gyro_against_level_accel_settles_between():
    # 90 deg/s for 1 s while the accelerometer keeps reporting level
    states = run_filter(static_stream(100, gyro=(90.0, 0.0, 0.0)))
    assert 0.0 < states[-1].pitch_deg < 90.0
    assert states[-1].t_ms == 990


def test_noiseless_lean_tracks_the_fall_angle(clean_lean):
    samples, truth = gen_lean_fall(clean_lean, seed=0)
    by_time = {state.t_ms: state for state in run_filter(samples)}
    assert truth.fall_onset_ms == 4000
    assert by_time[truth.fall_onset_ms].pitch_deg == pytest.approx(20.0, abs=1.0)
