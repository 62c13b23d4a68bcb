import os
import threading
import time

import pytest

from cli_app import main
from src.config import ROOT_DIR
from src.services.recording_service import load_session

SCENARIOS = os.path.join(ROOT_DIR, "scenarios")


def _scenario(name):
    return os.path.join(SCENARIOS, name)


def _simulate(tmp_path, name, seed, scenario="gait_10mwt.ini"):
    path = str(tmp_path / name)
    assert main(["simulate", "--scenario", _scenario(scenario), "--output", path, "--seed", str(seed)]) == 0
    return path


def test_simulate_is_deterministic(tmp_path):
    first = _simulate(tmp_path, "a.csv", 5)
    second = _simulate(tmp_path, "b.csv", 5)
    other = _simulate(tmp_path, "c.csv", 6)
    with open(first, "rb") as f1, open(second, "rb") as f2, open(other, "rb") as f3:
        a, b, c = f1.read(), f2.read(), f3.read()
    assert a == b
    assert a != c


def test_unknown_scenario_kind_is_a_config_error(tmp_path, capsys):
    scenario = tmp_path / "bad.ini"
    scenario.write_text("[scenario]\nkind = cartwheel\n", encoding="utf-8")
    assert main(["simulate", "--scenario", str(scenario), "--output", str(tmp_path / "x.csv")]) == 3
    assert "scenario kind" in capsys.readouterr().err
    assert not (tmp_path / "x.csv").exists()


def test_simulate_requires_a_destination():
    assert main(["simulate", "--scenario", _scenario("gait_10mwt.ini")]) == 2


@pytest.mark.parametrize("scenario, expected", [
    ("gait_10mwt.ini", ["step_count: 7", "breakpoint_events: 0"]),
    ("lean_fall.ini", ["breakpoint_events: 1", "fall_events: 1"]),
    ("walk_then_fall.ini", ["breakpoint_events: 1", "fall_events: 1"]),
])
def test_analyze_reports_ground_truth(tmp_path, scenario, expected):
    recording = _simulate(tmp_path, "session.csv", 1, scenario)
    report = tmp_path / "report.txt"
    series = tmp_path / "series.csv"
    assert main(["analyze", "--input", recording, "--output", str(report), "--series", str(series)]) == 0
    text = report.read_text(encoding="utf-8")
    for line in expected:
        assert line in text.splitlines()
    header, *rows = series.read_text(encoding="utf-8").splitlines()
    assert header == "t_ms,roll,pitch,yaw,gx,gz"
    assert len(rows) == len(load_session(recording).samples)


def test_analyze_missing_file_fails(tmp_path):
    assert main(["analyze", "--input", str(tmp_path / "absent.csv")]) != 0


def test_listen_times_out_with_empty_recording(tmp_path, free_udp_port):
    output = tmp_path / "live.csv"
    code = main(["listen", "--port", str(free_udp_port), "--host", "127.0.0.1",
                 "--output", str(output), "--timeout-ms", "300"])
    assert code == 0
    assert load_session(str(output)).samples == ()

    report = tmp_path / "report.txt"
    assert main(["analyze", "--input", str(output), "--output", str(report)]) == 0
    lines = report.read_text(encoding="utf-8").splitlines()
    assert "step_count: 0" in lines
    assert "breakpoint_events: 0" in lines


def test_listen_bind_failure(tmp_path):
    assert main(["listen", "--port", "0", "--host", "203.0.113.1", "--output", str(tmp_path / "x.csv"),
                 "--timeout-ms", "100"]) == 6


def test_listen_binds_the_configured_host(tmp_path):
    config_path = tmp_path / "remote.ini"
    config_path.write_text("[telemetry]\nhost = 203.0.113.1\n", encoding="utf-8")
    assert main(["listen", "--config", str(config_path), "--port", "0", "--output", str(tmp_path / "x.csv"),
                 "--timeout-ms", "100"]) == 6


def test_run_with_feedback_disabled_sends_nothing(tmp_path):
    recording = _simulate(tmp_path, "lean.csv", 2, "lean_fall.ini")
    config_path = tmp_path / "quiet.ini"
    config_path.write_text("[feedback]\nvestibular = false\npacemaker = false\nrisk = false\n", encoding="utf-8")
    commands = tmp_path / "commands.txt"
    assert main(["--config", str(config_path), "run", "--input", recording, "--output", str(commands)]) == 0
    assert commands.read_text(encoding="utf-8") == ""


def test_run_pacemaker_only_emits_pulse_progression(tmp_path):
    recording = _simulate(tmp_path, "gait.csv", 3)
    config_path = tmp_path / "pace.ini"
    config_path.write_text("[pacemaker]\ntarget_cadence_sps = 2.0\n\n"
                           "[feedback]\nvestibular = false\npacemaker = true\nrisk = false\nassist = false\n",
                           encoding="utf-8")
    commands = tmp_path / "commands.txt"
    assert main(["run", "--config", str(config_path), "--input", recording, "--output", str(commands)]) == 0
    times = [float(line.split(",")[0]) for line in commands.read_text(encoding="utf-8").splitlines()]
    assert times == [500.0 * i for i in range(10)]


def test_train_then_run_alerts_before_fall(tmp_path):
    recordings = [_simulate(tmp_path, f"wtf_{seed}.csv", seed, "walk_then_fall.ini") for seed in range(10)]
    model = tmp_path / "models" / "risk.model"
    sweep = tmp_path / "sweep.csv"
    assert main(["train", "--input", *recordings, "--output", str(model), "--report", str(sweep)]) == 0
    assert model.exists()
    assert len(sweep.read_text(encoding="utf-8").splitlines()) == 100

    held_out = _simulate(tmp_path, "held_out.csv", 99, "walk_then_fall.ini")
    onset = load_session(held_out).metadata.fall_onset_ms
    commands = tmp_path / "commands.txt"
    assert main(["run", "--input", held_out, "--model", str(model), "--output", str(commands)]) == 0
    alerts = []
    for line in commands.read_text(encoding="utf-8").splitlines():
        t_ms, frequency, _intensity, duration = (float(v) for v in line.split(","))
        if duration == 800.0:
            alerts.append(t_ms)
    assert alerts
    assert min(alerts) < onset


def test_train_with_annotation_file(tmp_path):
    recordings = [_simulate(tmp_path, f"wtf_{seed}.csv", seed, "walk_then_fall.ini") for seed in range(3)]
    annotations = tmp_path / "onsets.csv"
    rows = [f"{os.path.basename(path)},{load_session(path).metadata.fall_onset_ms}" for path in recordings]
    annotations.write_text("recording,fall_onset_ms\n" + "\n".join(rows) + "\n", encoding="utf-8")
    model = tmp_path / "risk.model"
    assert main(["train", "--input", *recordings, "--annotations", str(annotations), "--output", str(model)]) == 0

    broken = tmp_path / "broken.csv"
    broken.write_text("file,onset\nx,1\n", encoding="utf-8")
    assert main(["train", "--input", *recordings, "--annotations", str(broken), "--output", str(model)]) == 3


def test_live_run_matches_offline_analysis(tmp_path, free_udp_port):
    recording = _simulate(tmp_path, "gait.csv", 4)
    offline_events = tmp_path / "offline_events.txt"
    assert main(["analyze", "--input", recording, "--output", str(tmp_path / "r.txt"),
                 "--events-output", str(offline_events)]) == 0

    live_events = tmp_path / "live_events.txt"
    codes = []
    receiver = threading.Thread(target=lambda: codes.append(main([
        "run", "--port", str(free_udp_port), "--host", "127.0.0.1", "--timeout-ms", "2000",
        "--events-output", str(live_events), "--output", str(tmp_path / "live_commands.txt"),
        "--record", str(tmp_path / "live.csv"),
    ])))
    receiver.start()
    time.sleep(0.5)
    assert main(["simulate", "--scenario", _scenario("gait_10mwt.ini"), "--seed", "4",
                 "--target", f"127.0.0.1:{free_udp_port}", "--rate-multiplier", "4"]) == 0
    receiver.join(timeout=30)

    assert codes == [0]
    assert live_events.read_text(encoding="utf-8") == offline_events.read_text(encoding="utf-8")
    assert load_session(str(tmp_path / "live.csv")).samples == load_session(recording).samples


def test_run_record_keeps_events_and_commands(tmp_path):
    recording = _simulate(tmp_path, "lean.csv", 2, "lean_fall.ini")
    commands = tmp_path / "commands.txt"
    events = tmp_path / "events.txt"
    saved = tmp_path / "session.csv"
    assert main(["run", "--input", recording, "--output", str(commands), "--events-output", str(events),
                 "--record", str(saved)]) == 0
    loaded = load_session(str(saved))
    assert loaded.samples == load_session(recording).samples
    assert loaded.metadata == load_session(recording).metadata
    assert [c.as_line() for c in loaded.commands] == commands.read_text(encoding="utf-8").splitlines()
    assert [e.as_line() for e in loaded.events] == events.read_text(encoding="utf-8").splitlines()
    assert any(e.kind.value == "BreakpointCrossed" for e in loaded.events)
    assert loaded.commands
