"""Automated anomaly detection for high-frequency water-quality sensor series."""

from .core import (
    AnomalyError,
    AnomalyLabel,
    ConfigError,
    DataError,
    DetectorConfig,
    NumericError,
    SensorSpec,
    SeriesFrame,
    classify_type_to_class,
)
from .detect import DetectionTrace, run_detection
from .evaluate import ConfusionMatrix, EvalReport, build_confusion, fold_class2, metrics
from .features import hdoutliers_detect, knn_detect
from .forecast import ForecastModel, auto_arima, fit_arima, fit_linear_ar, fit_naive, fit_regarima
from .pipeline import RunConfig, run_pipeline
from .rules import run_rules
from .synth import InjectionPlan, generate_base, inject

__version__ = "0.1.0"
