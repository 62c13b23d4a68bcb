# src/services/risk_model_service.py
"""Fall-risk predictor over sliding windows of the IMU stream.

Each window of the six raw channels plus filtered pitch is reduced to a
fixed 43-value feature vector; an L2-regularized logistic regression,
trained by full-batch gradient descent from zero weights, maps it to a
probability that a fall is imminent.
"""

from __future__ import annotations

import logging
import math
import os
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Deque, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.fft import rfft
from scipy.special import expit
from sklearn.metrics import confusion_matrix
from sklearn.preprocessing import StandardScaler
from tqdm import tqdm

from src import config
from src.core.types import ImuSample, SessionRecording
from src.errors import (
    AnnotationError,
    DegenerateTrainingError,
    EvaluationError,
    InsufficientDataError,
    InvalidArgumentError,
    ModelFormatError,
    ShapeError,
)
from src.services.fusion_service import FilterConfig, run_filter

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

FEATURE_CHANNELS: Tuple[str, ...] = ("ax", "ay", "az", "gx", "gy", "gz", "pitch")
FEATURE_STATS: Tuple[str, ...] = ("mean", "var", "rms", "min", "max", "dom_freq")
FEATURE_NAMES: Tuple[str, ...] = tuple(
    f"{channel}_{stat}" for channel in FEATURE_CHANNELS for stat in FEATURE_STATS
) + ("pitch_slope",)
FEATURE_COUNT = len(FEATURE_NAMES)


class RiskWindowConfig(BaseModel):
    window_ms: float = Field(config.RISK_WINDOW_MS, gt=0.0)
    stride_ms: float = Field(config.RISK_STRIDE_MS, gt=0.0)
    horizon_ms: float = Field(config.RISK_HORIZON_MS, ge=0.0)
    min_coverage: float = Field(config.RISK_MIN_COVERAGE, gt=0.0, le=1.0)
    rate_hz: float = Field(config.NOMINAL_RATE_HZ, gt=0.0)


class TrainingConfig(BaseModel):
    learning_rate: float = Field(config.TRAIN_LEARNING_RATE, gt=0.0)
    epochs: int = Field(config.TRAIN_EPOCHS, ge=0)
    l2: float = Field(config.TRAIN_L2, ge=0.0)


@dataclass(frozen=True)
class FeatureVector:
    values: Tuple[float, ...]

    names = FEATURE_NAMES

    def __post_init__(self) -> None:
        if len(self.values) != FEATURE_COUNT:
            raise ShapeError(f"feature vector needs {FEATURE_COUNT} values, got {len(self.values)}")
        if not all(math.isfinite(v) for v in self.values):
            raise InvalidArgumentError("feature vector has non-finite entries")

    def __getitem__(self, name: str) -> float:
        return self.values[FEATURE_NAMES.index(name)]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass(frozen=True)
class LabeledWindow:
    features: FeatureVector
    label: int
    lead_time_ms: float = 0.0
    end_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise InvalidArgumentError(f"label must be 0 or 1, got {self.label!r}")
        if self.lead_time_ms < 0:
            raise InvalidArgumentError("lead_time_ms must be non-negative")


@dataclass(frozen=True)
class RiskModel:
    weights: Tuple[float, ...]
    bias: float
    means: Tuple[float, ...]
    scales: Tuple[float, ...]
    hyper: TrainingConfig = field(default_factory=TrainingConfig)
    loss_history: Tuple[float, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self) -> None:
        n = len(self.weights)
        if len(self.means) != n or len(self.scales) != n:
            raise ModelFormatError(f"weights, means and scales differ in length ({n}, {len(self.means)}, {len(self.scales)})")
        if not all(math.isfinite(v) for v in (*self.weights, *self.means, self.bias)):
            raise ModelFormatError("model parameters must be finite")
        if not all(math.isfinite(s) and s > 0 for s in self.scales):
            raise ModelFormatError("normalization scales must be strictly positive")

    @property
    def feature_count(self) -> int:
        return len(self.weights)

    @classmethod
    def zero(cls, feature_count: int = FEATURE_COUNT) -> "RiskModel":
        return cls(weights=(0.0,) * feature_count, bias=0.0,
                   means=(0.0,) * feature_count, scales=(1.0,) * feature_count)


@dataclass(frozen=True)
class ThresholdMetrics:
    threshold: float
    sensitivity: float
    specificity: float
    accuracy: float
    mean_lead_time_ms: float
    tp: int
    fp: int
    tn: int
    fn: int


# ---------------- Features -----------------
def dominant_frequency(signal: np.ndarray, rate_hz: float) -> float:
    """Frequency (Hz) of the strongest non-DC bin; 0 for a flat signal."""
    n = signal.size
    if n < 2:
        return 0.0
    spectrum = np.abs(rfft(signal))
    if spectrum.size < 2:
        return 0.0
    peak = 1 + int(np.argmax(spectrum[1:]))
    if spectrum[peak] <= 1e-9 * n * max(1.0, float(np.max(np.abs(signal)))):
        return 0.0
    return peak * rate_hz / n


def _slope(t_ms: np.ndarray, values: np.ndarray) -> float:
    t_rel = (t_ms - t_ms[0]) / 1000.0
    centred_t = t_rel - t_rel.mean()
    denominator = float(np.sum(centred_t ** 2))
    if denominator == 0:
        return 0.0
    return float(np.sum(centred_t * (values - values.mean())) / denominator)


def window_features(samples: Sequence[ImuSample], pitch: Sequence[float],
                    window_ms: float = config.RISK_WINDOW_MS, rate_hz: float = config.NOMINAL_RATE_HZ,
                    min_coverage: float = config.RISK_MIN_COVERAGE) -> FeatureVector:
    if len(samples) != len(pitch):
        raise ShapeError(f"{len(samples)} samples but {len(pitch)} pitch values")
    expected = window_ms * rate_hz / 1000.0
    if len(samples) < 2 or len(samples) < min_coverage * expected:
        raise InsufficientDataError(
            f"window holds {len(samples)} samples, needs {math.ceil(min_coverage * expected)}")

    data = np.column_stack([
        np.asarray([s.accel + s.gyro for s in samples], dtype=np.float64),
        np.asarray(pitch, dtype=np.float64),
    ])
    values: List[float] = []
    for j in range(data.shape[1]):
        column = data[:, j]
        values.extend([
            float(np.mean(column)),
            float(np.var(column)),
            float(np.sqrt(np.mean(column ** 2))),
            float(np.min(column)),
            float(np.max(column)),
            dominant_frequency(column, rate_hz),
        ])
    t_ms = np.asarray([s.t_ms for s in samples], dtype=np.float64)
    values.append(_slope(t_ms, data[:, -1]))
    return FeatureVector(tuple(values))


class RiskWindower:
    """Emits (window_end_ms, features) as the stream passes each window end.

    Window ends sit at t_first + window_ms + j * stride_ms; a window holds
    the samples with end - window_ms < t_ms <= end. Too sparse windows
    come out with features None.
    """

    def __init__(self, cfg: Optional[RiskWindowConfig] = None):
        self.cfg = cfg or RiskWindowConfig()
        self._buffer: Deque[Tuple[ImuSample, float]] = deque()
        self._next_end: Optional[float] = None

    def push(self, sample: ImuSample, pitch_deg: float) -> List[Tuple[float, Optional[FeatureVector]]]:
        cfg = self.cfg
        if self._next_end is None:
            self._next_end = sample.t_ms + cfg.window_ms
        self._buffer.append((sample, pitch_deg))
        ready = []
        while self._next_end <= sample.t_ms:
            end = self._next_end
            window = [(s, p) for s, p in self._buffer if end - cfg.window_ms < s.t_ms <= end]
            try:
                features = window_features([s for s, _ in window], [p for _, p in window],
                                           cfg.window_ms, cfg.rate_hz, cfg.min_coverage)
            except InsufficientDataError as e:
                logger.debug("RISK_WINDOW_SKIPPED end_ms=%s reason=%s", end, e)
                features = None
            ready.append((end, features))
            self._next_end = end + cfg.stride_ms
            while self._buffer and self._buffer[0][0].t_ms <= self._next_end - cfg.window_ms:
                self._buffer.popleft()
        return ready


def label_windows(recording: SessionRecording, cfg: Optional[RiskWindowConfig] = None,
                  filter_cfg: Optional[FilterConfig] = None,
                  fall_onset_ms: Optional[float] = None) -> List[LabeledWindow]:
    """Label 1 iff onset - horizon < window end <= onset; windows ending after onset are dropped."""
    cfg = cfg or RiskWindowConfig()
    onset = fall_onset_ms if fall_onset_ms is not None else recording.metadata.fall_onset_ms
    samples = recording.samples
    if onset is not None:
        if not samples or not samples[0].t_ms <= onset <= samples[-1].t_ms:
            raise AnnotationError(f"fall onset {onset} ms lies outside the recording span")
    pitch = [state.pitch_deg for state in run_filter(samples, filter_cfg)]

    windower = RiskWindower(cfg)
    labeled = []
    for sample, pitch_deg in zip(samples, pitch):
        for end, features in windower.push(sample, pitch_deg):
            if features is None:
                continue
            if onset is None:
                labeled.append(LabeledWindow(features, 0, 0.0, end))
                continue
            if end > onset:
                continue
            positive = onset - cfg.horizon_ms < end
            labeled.append(LabeledWindow(features, int(positive), float(onset - end) if positive else 0.0, end))
    return labeled


def windows_from_recordings(recordings: Sequence[SessionRecording], cfg: Optional[RiskWindowConfig] = None,
                            filter_cfg: Optional[FilterConfig] = None,
                            onsets: Optional[Sequence[Optional[float]]] = None,
                            show_progress: bool = config.SHOW_PROGRESS) -> List[LabeledWindow]:
    onsets = onsets if onsets is not None else [None] * len(recordings)
    windows: List[LabeledWindow] = []
    for recording, onset in tqdm(list(zip(recordings, onsets)), desc="Labeling recordings",
                                 disable=not show_progress):
        windows.extend(label_windows(recording, cfg, filter_cfg, onset))
    return windows


# ---------------- Training -----------------
def _loss(x: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, l2: float) -> float:
    z = x @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * np.dot(w, w))


def _design_matrix(data: Sequence[LabeledWindow]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.vstack([window.features.as_array() for window in data])
    y = np.asarray([window.label for window in data], dtype=np.float64)
    return x, y


def train(data: Sequence[LabeledWindow], hyper: Optional[TrainingConfig] = None,
          show_progress: bool = config.SHOW_PROGRESS) -> RiskModel:
    hyper = hyper or TrainingConfig()
    if not data:
        raise DegenerateTrainingError("no training windows")
    x, y = _design_matrix(data)
    positives = int(y.sum())
    if positives == 0 or positives == len(y):
        raise DegenerateTrainingError(f"training data holds a single class ({positives} of {len(y)} positive)")

    scaler = StandardScaler().fit(x)
    xs = scaler.transform(x)
    n, d = xs.shape
    w = np.zeros(d)
    b = 0.0
    history = []
    for epoch in tqdm(range(hyper.epochs), desc="Training epochs", disable=not show_progress):
        error = expit(xs @ w + b) - y
        w = w - hyper.learning_rate * (xs.T @ error / n + hyper.l2 * w)
        b = b - hyper.learning_rate * float(np.mean(error))
        history.append(_loss(xs, y, w, b, hyper.l2))
        if epoch % 100 == 0:
            logger.debug("TRAIN epoch=%d loss=%.6f", epoch, history[-1])

    logger.info("TRAIN_DONE windows=%d positives=%d epochs=%d final_loss=%s",
                n, positives, hyper.epochs, f"{history[-1]:.6f}" if history else "n/a")
    return RiskModel(
        weights=tuple(w.tolist()),
        bias=float(b),
        means=tuple(scaler.mean_.tolist()),
        scales=tuple(scaler.scale_.tolist()),
        hyper=hyper,
        loss_history=tuple(history),
    )


# ---------------- Prediction -----------------
def _as_features(features: Union[FeatureVector, Sequence[float], np.ndarray]) -> np.ndarray:
    if isinstance(features, FeatureVector):
        return features.as_array()
    return np.asarray(features, dtype=np.float64)


def predict_many(model: RiskModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.feature_count:
        raise ShapeError(f"model expects {model.feature_count} features, got {x.shape[1]}")
    z = ((x - np.asarray(model.means)) / np.asarray(model.scales)) @ np.asarray(model.weights) + model.bias
    return expit(z)


def predict(model: RiskModel, features: Union[FeatureVector, Sequence[float], np.ndarray]) -> float:
    x = _as_features(features)
    if x.ndim != 1 or x.size != model.feature_count:
        raise ShapeError(f"model expects {model.feature_count} features, got shape {x.shape}")
    return float(predict_many(model, x[None, :])[0])


# ---------------- Evaluation -----------------
def default_thresholds() -> List[float]:
    return [round(0.01 * i, 2) for i in range(1, 100)]


def evaluate(model: RiskModel, data: Sequence[LabeledWindow],
             thresholds: Optional[Iterable[float]] = None) -> List[ThresholdMetrics]:
    if not data:
        raise EvaluationError("empty test set")
    x, y = _design_matrix(data)
    labels = y.astype(int)
    risks = predict_many(model, x)
    lead = np.asarray([window.lead_time_ms for window in data], dtype=np.float64)

    metrics = []
    for threshold in (default_thresholds() if thresholds is None else thresholds):
        predicted = (risks >= threshold).astype(int)
        tn, fp, fn, tp = (int(v) for v in confusion_matrix(labels, predicted, labels=[0, 1]).ravel())
        hits = (labels == 1) & (predicted == 1)
        metrics.append(ThresholdMetrics(
            threshold=float(threshold),
            sensitivity=tp / (tp + fn) if tp + fn else math.nan,
            specificity=tn / (tn + fp) if tn + fp else math.nan,
            accuracy=(tp + tn) / len(labels),
            mean_lead_time_ms=float(lead[hits].mean()) if hits.any() else math.nan,
            tp=tp, fp=fp, tn=tn, fn=fn,
        ))
    return metrics


def best_threshold(metrics: Sequence[ThresholdMetrics]) -> ThresholdMetrics:
    """Row maximizing sensitivity + specificity (first one on ties)."""
    scored = [m for m in metrics if not (math.isnan(m.sensitivity) or math.isnan(m.specificity))]
    if not scored:
        raise EvaluationError("no threshold has both sensitivity and specificity defined")
    return max(scored, key=lambda m: m.sensitivity + m.specificity)


def metrics_frame(metrics: Sequence[ThresholdMetrics]) -> pd.DataFrame:
    return pd.DataFrame([asdict(m) for m in metrics])


# ---------------- Persistence -----------------
def _join(values: Sequence[float]) -> str:
    return " ".join(repr(float(v)) for v in values)


def save_model(model: RiskModel, path: str) -> None:
    hyper = model.hyper
    lines = [
        f"feature_count={model.feature_count} learning_rate={hyper.learning_rate!r} "
        f"epochs={hyper.epochs} l2={hyper.l2!r}",
        _join(model.means),
        _join(model.scales),
        _join(model.weights),
        repr(float(model.bias)),
    ]
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = path + ".tmp"
    try:
        with open(tmp_path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        os.replace(tmp_path, path)
    finally:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
    logger.info("MODEL_SAVED path=%s features=%d", path, model.feature_count)


def load_model(path: str) -> RiskModel:
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = [line.strip() for line in f if line.strip()]
    except OSError as e:
        raise ModelFormatError(f"cannot read model file {path}: {e}") from e
    if len(lines) != 5:
        raise ModelFormatError(f"model file {path} must hold 5 lines, found {len(lines)}")
    try:
        header = dict(item.split("=", 1) for item in lines[0].split())
        count = int(header["feature_count"])
        hyper = TrainingConfig(
            learning_rate=float(header["learning_rate"]),
            epochs=int(header["epochs"]),
            l2=float(header["l2"]),
        )
        means, scales, weights = (tuple(float(v) for v in line.split()) for line in lines[1:4])
        bias = float(lines[4])
    except (KeyError, ValueError) as e:
        raise ModelFormatError(f"malformed model file {path}: {e}") from e
    if not len(means) == len(scales) == len(weights) == count:
        raise ModelFormatError(f"model file {path} declares {count} features but holds "
                               f"{len(means)}/{len(scales)}/{len(weights)} values")
    return RiskModel(weights=weights, bias=bias, means=means, scales=scales, hyper=hyper)


__all__ = [
    "FEATURE_COUNT",
    "FEATURE_NAMES",
    "FeatureVector",
    "LabeledWindow",
    "RiskModel",
    "RiskWindowConfig",
    "RiskWindower",
    "ThresholdMetrics",
    "TrainingConfig",
    "best_threshold",
    "default_thresholds",
    "dominant_frequency",
    "evaluate",
    "label_windows",
    "load_model",
    "metrics_frame",
    "predict",
    "predict_many",
    "save_model",
    "train",
    "window_features",
    "windows_from_recordings",
]
