# src/core/run_config.py
"""INI run configuration and scenario files.

    [fusion]
    alpha = 0.98

    [feedback]
    pacemaker = true

Every section maps onto one module's pydantic config; unknown sections
or keys and out-of-range values are ConfigurationErrors naming the field.
"""

from __future__ import annotations

import configparser
import logging
import os
from typing import Dict, Optional, Type

from pydantic import BaseModel, Field, ValidationError

from src import config
from src.errors import ConfigurationError, ScenarioError
from src.services.detection_service import BreakpointConfig, FallDetectorConfig, StepDetectorConfig
from src.services.feedback_service import AssistPolicy, PacemakerConfig, RiskFeedbackConfig, VestibularFeedbackConfig
from src.services.fusion_service import FilterConfig
from src.services.risk_model_service import RiskWindowConfig, TrainingConfig
from src.services.simulator_service import SCENARIO_KINDS, GaitScenario, LeanFallScenario, SimulationScenario

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())


class TelemetryConfig(BaseModel):
    host: str = config.UDP_HOST
    port: int = Field(config.UDP_PORT, ge=0, le=65535)
    queue_size: int = Field(config.INGEST_QUEUE_SIZE, ge=1)
    timeout_ms: Optional[int] = Field(None, gt=0)
    rate_multiplier: float = Field(1.0, ge=0.0)


class FeedbackConfig(BaseModel):
    """Which strategies may drive the motor."""

    vestibular: bool = True
    pacemaker: bool = False
    risk: bool = True
    assist: bool = True


class RunConfig(BaseModel):
    fusion: FilterConfig = Field(default_factory=FilterConfig)
    breakpoint: BreakpointConfig = Field(default_factory=BreakpointConfig)
    steps: StepDetectorConfig = Field(default_factory=StepDetectorConfig)
    fall: FallDetectorConfig = Field(default_factory=FallDetectorConfig)
    vestibular: VestibularFeedbackConfig = Field(default_factory=VestibularFeedbackConfig)
    pacemaker: PacemakerConfig = Field(default_factory=PacemakerConfig)
    assist: AssistPolicy = Field(default_factory=AssistPolicy)
    risk: RiskWindowConfig = Field(default_factory=RiskWindowConfig)
    risk_alert: RiskFeedbackConfig = Field(default_factory=RiskFeedbackConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    telemetry: TelemetryConfig = Field(default_factory=TelemetryConfig)
    feedback: FeedbackConfig = Field(default_factory=FeedbackConfig)


def _read_ini(path: str) -> configparser.ConfigParser:
    if not os.path.isfile(path):
        raise ConfigurationError(f"configuration file not found: {path}", field="path")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigurationError(f"cannot parse {path}: {e}") from e
    return parser


def _section_values(parser: configparser.ConfigParser, section: str, model: Type[BaseModel],
                    error_cls: Type[ConfigurationError]) -> Dict[str, str]:
    values = dict(parser.items(section))
    for key in values:
        if key not in model.model_fields:
            raise error_cls(f"unknown key '{key}' in section [{section}]", field=f"{section}.{key}")
    return values


def _build(model: Type[BaseModel], values: dict, prefix: str, error_cls: Type[ConfigurationError]):
    try:
        return model(**values)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        name = f"{prefix}.{location}" if location else prefix
        raise error_cls(f"invalid value for {name}: {first['msg']}", field=name) from e


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Dict[str, object]]] = None) -> RunConfig:
    """Defaults, then the INI file (when given), then overrides {section: {key: value}}."""
    sections: Dict[str, Dict[str, object]] = {}
    if path is not None:
        parser = _read_ini(path)
        for section in parser.sections():
            if section not in RunConfig.model_fields:
                raise ConfigurationError(f"unknown section [{section}] in {path}", field=section)
            model = RunConfig.model_fields[section].annotation
            sections[section] = dict(_section_values(parser, section, model, ConfigurationError))
    for section, values in (overrides or {}).items():
        sections.setdefault(section, {}).update({k: v for k, v in values.items() if v is not None})

    built = {name: _build(RunConfig.model_fields[name].annotation, values, name, ConfigurationError)
             for name, values in sections.items()}
    run_config = RunConfig(**built)
    logger.debug("RUN_CONFIG path=%s sections=%s", path, sorted(sections))
    return run_config


def load_scenario(path: str) -> SimulationScenario:
    parser = _read_ini(path)
    known = {"scenario", "gait", "fall"}
    for section in parser.sections():
        if section not in known:
            raise ScenarioError(f"unknown section [{section}] in {path}", field=section)
    if not parser.has_section("scenario") or not parser.has_option("scenario", "kind"):
        raise ScenarioError(f"{path} must set [scenario] kind", field="scenario.kind")
    scenario_values = dict(parser.items("scenario"))
    kind = scenario_values.pop("kind").strip()
    if scenario_values:
        key = sorted(scenario_values)[0]
        raise ScenarioError(f"unknown key '{key}' in section [scenario]", field=f"scenario.{key}")
    if kind not in SCENARIO_KINDS:
        raise ScenarioError(f"unknown scenario kind '{kind}' (expected one of {', '.join(SCENARIO_KINDS)})",
                            field="scenario.kind")

    parts = {}
    for section, model in (("gait", GaitScenario), ("fall", LeanFallScenario)):
        values = _section_values(parser, section, model, ScenarioError) if parser.has_section(section) else {}
        parts[section] = _build(model, values, section, ScenarioError)
    return SimulationScenario(kind=kind, gait=parts["gait"], fall=parts["fall"])


__all__ = [
    "FeedbackConfig",
    "RunConfig",
    "TelemetryConfig",
    "load_run_config",
    "load_scenario",
]
