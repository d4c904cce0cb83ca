"""Sequential one-step-ahead detection with prediction intervals.

In ``AD`` mode every actual observation enters the forecasting history.  In
``ADAM`` mode an observation that falls outside its prediction interval is
replaced in the history by its forecast.  Rule findings mark a timestamp as
flagged (source ``"rule"``) but never trigger substitution on their own.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import ConfigError, DetectorConfig, InvalidDofError, SeriesFrame, TransformError, require_valid
from .forecast import ForecastModel, ForecastState, MissingCovariateError

MODES = ("AD", "ADAM")
TRACE_COLUMNS = ("timestamp", "observed", "forecast", "lower", "upper", "flagged", "source", "mode")


@dataclass(frozen=True)
class PredictionInterval:
    lower: float
    upper: float
    center: float
    alpha: float

    @property
    def width(self) -> float:
        return self.upper - self.lower


def t_quantile(prob: float, dof: float) -> float:
    return float(stats.t.ppf(prob, dof))


def half_width(model: ForecastModel, alpha: float) -> float:
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    dof = model.T - model.k_params
    if dof < 1:
        raise InvalidDofError(f"T - k = {dof}; the t quantile needs at least 1 degree of freedom")
    return t_quantile(1 - alpha / 2, dof) * model.s


def prediction_interval(model: ForecastModel, center: float, alpha: float) -> PredictionInterval:
    hw = half_width(model, alpha)
    return PredictionInterval(center - hw, center + hw, center, alpha)


def classify_observation(observed: float, pi: PredictionInterval) -> bool:
    """True when ``observed`` lies strictly outside the interval."""
    return bool(observed < pi.lower or observed > pi.upper)


def apply_transform(values: np.ndarray, transform: str) -> np.ndarray:
    """Map raw values onto the modelling scale, keeping one entry per input
    (the first entry is NaN for ``diff-log``)."""
    v = np.asarray(values, dtype=float)
    if transform == "identity":
        return v.copy()
    if np.any(v <= 0):
        raise TransformError(f"{transform} transform needs positive values; sanitize the frame first")
    logged = np.log(v)
    if transform == "log":
        return logged
    if transform == "diff-log":
        return np.r_[np.nan, np.diff(logged)]
    raise TransformError(f"unknown transform {transform!r}")


@dataclass(frozen=True)
class TraceRecord:
    timestamp: np.datetime64
    observed: float
    used_value: float
    forecast: float
    lower: float
    upper: float
    flagged: bool
    source: str
    warmup: bool


@dataclass(frozen=True)
class DetectionTrace:
    """Column-oriented record of one detection pass (transformed scale).

    Warm-up rows carry NaN forecasts and bounds.  ``outside`` marks every
    interval excursion (these drive ADAM substitution); ``pi_flagged`` drops
    the ones already claimed by a rule so nothing is counted twice.
    """

    variable: str
    method: str
    mode: str
    timestamps: np.ndarray
    observed: np.ndarray
    used_value: np.ndarray
    forecast: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    outside: np.ndarray
    rule_flagged: np.ndarray
    warmup: np.ndarray

    @property
    def pi_flagged(self) -> np.ndarray:
        return self.outside & ~self.rule_flagged

    @property
    def flagged(self) -> np.ndarray:
        return self.pi_flagged | self.rule_flagged

    @property
    def source(self) -> np.ndarray:
        out = np.full(len(self.timestamps), "", dtype=object)
        out[self.pi_flagged] = "pi"
        out[self.rule_flagged] = "rule"
        return out

    @property
    def substituted(self) -> np.ndarray:
        return self.outside & (self.mode == "ADAM")

    def __len__(self):
        return len(self.timestamps)

    @property
    def records(self) -> list[TraceRecord]:
        src = self.source
        return [
            TraceRecord(
                self.timestamps[i], float(self.observed[i]), float(self.used_value[i]),
                float(self.forecast[i]), float(self.lower[i]), float(self.upper[i]),
                bool(self.flagged[i]), src[i], bool(self.warmup[i]),
            )
            for i in range(len(self))
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        flagged, src = self.flagged, self.source
        for i in range(len(self)):
            w.writerow([
                str(self.timestamps[i]), _fmt(self.observed[i]), _fmt(self.forecast[i]),
                _fmt(self.lower[i]), _fmt(self.upper[i]), int(flagged[i]), src[i], self.mode,
            ])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, variable: str = "", method: str = "") -> "DetectionTrace":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ConfigError("empty trace file")
        col = lambda k: np.array([float(r[k]) if r[k] != "" else np.nan for r in rows])
        mode = rows[0]["mode"]
        fc = col("forecast")
        src = np.array([r["source"] for r in rows])
        pi = src == "pi"
        observed = col("observed")
        used = np.where(pi & (mode == "ADAM"), fc, observed)
        return cls(
            variable, method, mode, np.array([r["timestamp"] for r in rows], dtype="datetime64[s]"),
            observed, used, fc, col("lower"), col("upper"), pi, src == "rule", np.isnan(fc),
        )


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def run_detection(
    frame: SeriesFrame,
    model: ForecastModel,
    mode: str = "AD",
    rule_findings=(),
    covariates=None,
    config: DetectorConfig | None = None,
    method: str = "",
) -> DetectionTrace:
    """Forecast, bound and classify every observation of ``frame`` in order.

    ``frame`` holds raw values (already sanitized); they are mapped onto the
    model's scale here.  ``covariates`` (RegARIMA only) is an
    (n_obs, n_covariates) array on the modelling scale, aligned with ``frame``.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    config = config or DetectorConfig()
    require_valid(frame)
    y = apply_transform(frame.values, model.training_transform)
    n = len(y)
    Z = None
    if model.kind == "RegARIMA":
        if covariates is None:
            raise MissingCovariateError("RegARIMA detection needs covariates")
        Z = np.asarray(covariates, dtype=float).reshape(n, -1)
        if model.training_transform == "diff-log":
            raise TransformError("RegARIMA is not defined on the diff-log scale")

    rule_ts = {f.timestamp.tolist() for f in rule_findings}
    rule_flagged = np.array([t in rule_ts for t in frame.timestamps.tolist()], dtype=bool)

    hw = half_width(model, config.alpha)
    fc = np.full(n, np.nan)
    used = y.copy()
    outside = np.zeros(n, dtype=bool)
    warm = np.ones(n, dtype=bool)
    state = ForecastState(model)
    start = 1 if model.training_transform == "diff-log" else 0
    adam = mode == "ADAM"
    for i in range(start, n):
        z = Z[i] if Z is not None else None
        if state.ready():
            f = state.forecast(z)
            fc[i] = f
            warm[i] = False
            if y[i] < f - hw or y[i] > f + hw:
                outside[i] = True
                if adam:
                    used[i] = f
        state.update(used[i], z)
    return DetectionTrace(
        frame.name, method or model.kind, mode, frame.timestamps, y, used, fc,
        fc - hw, fc + hw, outside, rule_flagged, warm,
    )
