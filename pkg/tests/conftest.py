import os
import socket

os.environ.setdefault("EQUILIVEST_SHOW_PROGRESS", "false")

import pytest

from src.services.simulator_service import GaitScenario, LeanFallScenario


@pytest.fixture
def free_udp_port():
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    return port


@pytest.fixture
def clean_gait():
    return GaitScenario(cadence_sps=1.4, duration_ms=5000, accel_noise_std=0.0, gyro_noise_std=0.0)


@pytest.fixture
def clean_lean():
    return LeanFallScenario(lean_rate_dps=5.0, theta_fall_deg=20.0, theta_fall_spread_deg=0.0,
                            accel_noise_std=0.0, gyro_noise_std=0.0)
