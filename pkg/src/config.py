import os
from dotenv import load_dotenv

ROOT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

load_dotenv(os.path.join(ROOT_DIR, '.env'))


def _env_bool(name: str, default: bool) -> bool:
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in ('1', 'true', 'yes', 'on')


# --- Runtime / Operator Settings ---
UDP_HOST = os.getenv('EQUILIVEST_UDP_HOST', '127.0.0.1')
UDP_PORT = int(os.getenv('EQUILIVEST_UDP_PORT', '5005'))
CONFIG_FILE = os.getenv('EQUILIVEST_CONFIG_FILE', os.path.join(ROOT_DIR, 'equilivest.ini'))
LOG_LEVEL = os.getenv('EQUILIVEST_LOG_LEVEL', 'INFO').upper()
SHOW_PROGRESS = _env_bool('EQUILIVEST_SHOW_PROGRESS', True)

# --- Telemetry Configuration ---
PACKET_MAGIC = b'EQLV'
PACKET_VERSION = 1
PACKET_SIZE = 65
RECEIVE_BUFFER_BYTES = 2048
RECEIVE_POLL_SECONDS = 0.05
INGEST_QUEUE_SIZE = int(os.getenv('EQUILIVEST_QUEUE_SIZE', '4096'))

# --- Fusion Configuration (complementary filter) ---
FILTER_ALPHA = 0.98
NOMINAL_RATE_HZ = 100.0
DT_CLAMP_MIN_FACTOR = 0.5
DT_CLAMP_MAX_FACTOR = 2.0
REINIT_GAP_PERIODS = 20

# --- Detection Configuration ---
BREAKPOINT_THETA_STAR_DEG = 15.0
BREAKPOINT_HYSTERESIS_DEG = 2.0
BREAKPOINT_MIN_DWELL_MS = 50
BREAKPOINT_PERCENTILE = 10.0
STEP_PEAK_THRESHOLD_DPS = 30.0
STEP_REFRACTORY_MS = 300
STEP_SMOOTHING_WINDOW = 5
STEP_CALIBRATION_FRACTION = 0.5
FALL_ANGLE_DEG = 60.0
FALL_HYSTERESIS_DEG = 10.0
CADENCE_WINDOW_MS = 5000

# --- Feedback Configuration ---
VF_PITCH_FLOOR_DEG = 2.0
VF_F_MIN_HZ = 1.0
VF_F_MAX_HZ = 9.0
VF_UPDATE_INTERVAL_MS = 100
PACEMAKER_CADENCE_SPS = 1.8
PACEMAKER_PULSE_MS = 100
ASSIST_DECAY = 0.8
ASSIST_GAIN_MIN = 0.1
ASSIST_WINDOW_MS = 5000
ASSIST_CADENCE_TOLERANCE = 0.2
RISK_ALERT_DURATION_MS = 800
RISK_ALERT_THRESHOLD = 0.5

# --- Risk Model Configuration ---
RISK_WINDOW_MS = 1000
RISK_STRIDE_MS = 250
RISK_HORIZON_MS = 1000
RISK_MIN_COVERAGE = 0.8
TRAIN_LEARNING_RATE = 0.1
TRAIN_EPOCHS = 500
TRAIN_L2 = 1e-3

# --- Simulator Configuration ---
SIM_RATE_HZ = 100.0
SIM_SESSION_EPOCH = '1970-01-01T00:00:00+00:00'
SIM_THETA_FALL_SPREAD_DEG = 6.0


def validate_config():
    """Validates the essential configuration variables."""
    if not 0 < UDP_PORT < 65536:
        print(f"Validation Error: EQUILIVEST_UDP_PORT={UDP_PORT} is not a valid port.")
        return False
    if INGEST_QUEUE_SIZE <= 0:
        print("Validation Error: EQUILIVEST_QUEUE_SIZE must be positive.")
        return False
    if LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
        print(f"Validation Error: unknown log level '{LOG_LEVEL}'.")
        return False
    return True


IS_CONFIG_VALID = validate_config()
