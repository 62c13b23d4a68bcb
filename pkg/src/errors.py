"""Error hierarchy shared by every service.

Each class carries the process exit code the CLI uses when the error
escapes a subcommand.
"""

from __future__ import annotations

from typing import Optional


class EquilivestError(Exception):
    exit_code = 1


class InvalidArgumentError(EquilivestError, ValueError):
    exit_code = 2


class DegenerateInputError(InvalidArgumentError):
    """Input carries no usable information (e.g. a zero accelerometer vector)."""


class ConfigurationError(EquilivestError, ValueError):
    exit_code = 3

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class ScenarioError(ConfigurationError):
    pass


class StreamOrderError(EquilivestError):
    exit_code = 4

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class TelemetryError(EquilivestError):
    exit_code = 5
    check = "telemetry"


class PacketLengthError(TelemetryError):
    check = "length"


class ProtocolError(TelemetryError):
    check = "protocol"


class IntegrityError(TelemetryError):
    check = "crc"


class VersionError(TelemetryError):
    check = "version"


class TransportError(EquilivestError):
    exit_code = 6


class RecordingParseError(EquilivestError):
    exit_code = 7

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class CalibrationError(EquilivestError):
    exit_code = 8


class RiskModelError(EquilivestError):
    exit_code = 9


class InsufficientDataError(RiskModelError):
    pass


class AnnotationError(RiskModelError):
    pass


class DegenerateTrainingError(RiskModelError):
    pass


class ShapeError(RiskModelError):
    pass


class EvaluationError(RiskModelError):
    pass


class ModelFormatError(RiskModelError):
    pass


class UndefinedMeasureError(EquilivestError):
    exit_code = 10
