"""CSV ingestion, preprocessing, run configuration and the end-to-end run.

A run goes rules -> regression models (AD and/or ADAM) -> feature detectors
-> evaluation with rule hits folded into TP, then writes flags, reports,
traces, models, scores and SVG plots.
"""

from __future__ import annotations

import csv
import io
import json
import re
from contextlib import contextmanager
from dataclasses import dataclass, field, fields, replace
from datetime import datetime
from pathlib import Path

import numpy as np

from .core import (
    DEFAULT_SENSOR_SPECS,
    TYPE_CODES,
    AnomalyError,
    AnomalyLabel,
    ConfigError,
    DataError,
    DetectorConfig,
    InsufficientDataError,
    InvalidTypeError,
    SensorSpec,
    SeriesFrame,
    as_float_array,
    to_datetime64,
)
from .detect import MODES, DetectionTrace, apply_transform, run_detection
from .evaluate import EvalReport, build_confusion, fold_class2, metrics, per_type_report, reports_to_csv, reports_to_table, rmse
from .features import (
    METHODS as FEATURE_METHODS,
    FeatureMatrix,
    OutlierScoreSet,
    detect as feature_detect,
    normalize_columns,
    transform_derivative,
    transform_log,
    transform_one_sided,
)
from .forecast import auto_arima, fit_arima, fit_linear_ar, fit_naive, fit_regarima, select_ar_order
from .rules import run_rules

MODEL_CHOICES = ("naive", "linear_ar", "arima", "regarima")
FEATURE_TRANSFORMS = ("log", "derivative", "os-derivative")
MIN_TRAINING_POINTS = 50
FLAG_COLUMNS = ("timestamp", "variable", "method", "flagged", "type_code", "source")


class ExtrapolationError(DataError):
    pass


@contextmanager
def stage(name: str):
    """Re-raise package errors with the failing stage named, keeping their type."""
    try:
        yield
    except AnomalyError as exc:
        if str(exc).startswith("["):
            raise
        raise type(exc)(f"[{name}] {exc}") from exc


# -- ingestion --------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnMapping:
    timestamp_column: str = "timestamp"
    value_columns: dict = field(default_factory=dict)   # variable -> column
    label_columns: dict = field(default_factory=dict)   # variable -> column
    timestamp_format: str | None = None                 # strptime pattern; None means ISO 8601

    @classmethod
    def infer(cls, header, timestamp_column: str = "timestamp", timestamp_format: str | None = None) -> "ColumnMapping":
        """Every column other than the timestamp and ``<variable>_label`` columns is a variable."""
        header = list(header)
        if timestamp_column not in header:
            raise ConfigError(f"timestamp column {timestamp_column!r} not in header")
        values = {c: c for c in header if c != timestamp_column and not c.endswith("_label")}
        labels = {v: f"{v}_label" for v in values if f"{v}_label" in header}
        return cls(timestamp_column, values, labels, timestamp_format)

    def check(self, header) -> None:
        missing = [c for c in (self.timestamp_column, *self.value_columns.values(), *self.label_columns.values())
                   if c not in header]
        if missing:
            raise ConfigError(f"column(s) missing from header: {', '.join(missing)}")


def _parse_time(text: str, fmt: str | None) -> np.datetime64:
    if fmt:
        return to_datetime64(datetime.strptime(text, fmt))
    return to_datetime64(text.strip().replace(" ", "T").rstrip("Z"))


def read_csv_text(text: str, mapping: ColumnMapping | None = None, variables=None) -> dict:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("input is empty") from None
    mapping = mapping or ColumnMapping.infer(header)
    mapping.check(header)
    col = {c: i for i, c in enumerate(header)}
    names = list(variables) if variables else list(mapping.value_columns)
    unknown = [v for v in names if v not in mapping.value_columns]
    if unknown:
        raise ConfigError(f"unknown variable(s): {', '.join(unknown)}")
    cols: dict = {v: ([], [], {}) for v in names}
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"line {line_no}: expected {len(header)} fields, got {len(row)}")
        try:
            ts = _parse_time(row[col[mapping.timestamp_column]], mapping.timestamp_format)
        except ValueError:
            raise DataError(f"line {line_no}: unparseable timestamp {row[col[mapping.timestamp_column]]!r}") from None
        for v in names:
            raw = row[col[mapping.value_columns[v]]].strip()
            if raw == "":
                continue
            try:
                value = float(raw)
            except ValueError:
                raise DataError(f"line {line_no}: {v} value {raw!r} is not a number") from None
            t_list, v_list, labs = cols[v]
            t_list.append(ts)
            v_list.append(value)
            if v in mapping.label_columns:
                code = row[col[mapping.label_columns[v]]].strip()
                if code:
                    if code not in TYPE_CODES:
                        raise InvalidTypeError(f"line {line_no}: unknown label {code!r}")
                    labs[ts] = AnomalyLabel(code)
    frames = {}
    for v, (t_list, v_list, labs) in cols.items():
        if not v_list:
            raise DataError(f"variable {v!r} has no observations")
        frames[v] = SeriesFrame.from_arrays(v, np.array(t_list, dtype="datetime64[s]"), v_list, labs)
    return frames


def load_csv(path, mapping: ColumnMapping | None = None, variables=None) -> dict:
    """Read a wide CSV into one frame per variable; blank cells are missing observations."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    return read_csv_text(text, mapping, variables)


def frames_to_csv(frames: dict) -> str:
    """Wide CSV with ``timestamp``, each variable and its ``<variable>_label`` column."""
    names = list(frames)
    all_ts = sorted(set().union(*(f.timestamps.tolist() for f in frames.values())))
    lookup = {v: dict(zip(f.timestamps.tolist(), f.values)) for v, f in frames.items()}
    label_codes = {v: {k.tolist(): lab.type_code for k, lab in f.labels.items()} for v, f in frames.items()}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp", *names, *(f"{v}_label" for v in names)])
    for t in all_ts:
        vals = [repr(float(lookup[v][t])) if t in lookup[v] else "" for v in names]
        labs = [label_codes[v].get(t, "") for v in names]
        w.writerow([str(np.datetime64(t, "s")), *vals, *labs])
    return buf.getvalue()


# -- preprocessing ------------------------------------------------------------

def _seconds(ts) -> np.ndarray:
    return np.asarray(ts, dtype="datetime64[s]").astype(np.int64)


def interpolate_covariate(target: SeriesFrame, covariate: SeriesFrame) -> np.ndarray:
    """Covariate values linearly interpolated in time at the target's timestamps."""
    tt, ct = _seconds(target.timestamps), _seconds(covariate.timestamps)
    if len(ct) == 0:
        raise ExtrapolationError(f"covariate {covariate.name!r} is empty")
    outside = (tt < ct[0]) | (tt > ct[-1])
    if np.any(outside):
        first = target.timestamps[np.argmax(outside)]
        raise ExtrapolationError(f"{first} lies outside the span of covariate {covariate.name!r}")
    return np.interp(tt, ct, covariate.values)


def sanitize_nonpositive(series) -> tuple[np.ndarray, np.ndarray]:
    """Replace every value <= 0 with the last positive value before it.

    Returns the cleaned values and the indices that were replaced.
    """
    x = as_float_array(series).copy()
    if len(x) == 0:
        return x, np.array([], dtype=int)
    if not x[0] > 0:
        raise DataError("first value is not positive, so there is nothing to carry forward")
    bad = np.flatnonzero(~(x > 0))
    for i in bad:
        x[i] = x[i - 1]
    return x, bad


def training_mask(frame: SeriesFrame, exclude=()) -> np.ndarray:
    """Rows kept for training: everything not labelled Class 1 or Class 3,
    minus any timestamps in ``exclude``."""
    mask = ~np.isin(frame.label_classes(), (1, 3))
    if len(exclude):
        mask &= ~np.isin(frame.timestamps, np.asarray(list(exclude), dtype="datetime64[s]"))
    return mask


def build_training_set(frame: SeriesFrame, transform: str = "log", exclude=()) -> np.ndarray:
    mask = training_mask(frame, exclude)
    if mask.sum() < MIN_TRAINING_POINTS:
        raise InsufficientDataError(
            f"{frame.name}: {int(mask.sum())} clean points left for training, need {MIN_TRAINING_POINTS}"
        )
    y = apply_transform(frame.values[mask], transform)
    return y[1:] if transform == "diff-log" else y


# -- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class VariableConfig:
    name: str
    spec: SensorSpec
    transform: str = "log"
    direction: str = "negative"   # sign kept by the one-sided derivative
    covariates: tuple = ()

    def __post_init__(self):
        if self.transform not in ("log", "identity"):
            raise ConfigError(f"{self.name}: transform must be 'log' or 'identity'")
        if self.direction not in ("positive", "negative"):
            raise ConfigError(f"{self.name}: direction must be 'positive' or 'negative'")
        object.__setattr__(self, "covariates", tuple(self.covariates))


@dataclass(frozen=True)
class RunConfig:
    variables: tuple
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    models: tuple = ("naive",)
    modes: tuple = ("AD",)
    arima_order: tuple | None = None   # fixed (p, d, q); None runs the AIC search
    feature_methods: tuple = ()
    feature_transforms: tuple = ("derivative",)
    derivative_scheme: str = "backward"
    plots: bool = True

    def __post_init__(self):
        for name in ("variables", "models", "modes", "feature_methods", "feature_transforms"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.variables:
            raise ConfigError("at least one variable is required")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ConfigError("variable names must be unique")
        for bad, allowed, what in (
            (set(self.models) - set(MODEL_CHOICES), MODEL_CHOICES, "model"),
            (set(self.modes) - set(MODES), MODES, "mode"),
            (set(self.feature_methods) - set(FEATURE_METHODS), FEATURE_METHODS, "feature method"),
            (set(self.feature_transforms) - set(FEATURE_TRANSFORMS), FEATURE_TRANSFORMS, "feature transform"),
        ):
            if bad:
                raise ConfigError(f"unknown {what}(s) {sorted(bad)}; choose from {allowed}")
        for v in self.variables:
            missing = [c for c in v.covariates if c not in names or c == v.name]
            if missing:
                raise ConfigError(f"{v.name}: covariate(s) {missing} are not other configured variables")
            if "regarima" in self.models and not v.covariates:
                raise ConfigError(f"{v.name}: regarima needs at least one covariate")
        if self.models and not self.modes:
            raise ConfigError("regression models need at least one mode")
        if self.arima_order is not None:
            order = tuple(int(o) for o in self.arima_order)
            if len(order) != 3 or min(order) < 0:
                raise ConfigError("arima_order must be three non-negative integers")
            object.__setattr__(self, "arima_order", order)

    @property
    def variable_names(self) -> list[str]:
        return [v.name for v in self.variables]

    def variable(self, name: str) -> VariableConfig:
        for v in self.variables:
            if v.name == name:
                return v
        raise ConfigError(f"unknown variable {name!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        variables = []
        for vd in doc.pop("variables", []):
            vd = dict(vd)
            name = vd.pop("name")
            base = DEFAULT_SENSOR_SPECS.get(name)
            spec_keys = ("min_detectable", "max_detectable", "zero_is_impossible")
            if base is None and not {"min_detectable", "max_detectable"} <= set(vd):
                raise ConfigError(f"{name}: no default sensor range; give min_detectable and max_detectable")
            spec_args = {k: vd.pop(k) for k in spec_keys if k in vd}
            spec = replace(base, **spec_args) if base else SensorSpec(name, **spec_args)
            try:
                variables.append(VariableConfig(name, spec, **vd))
            except TypeError as exc:
                raise ConfigError(f"{name}: {exc}") from None
        det = DetectorConfig(**doc.pop("detector", {}))
        known = {f.name for f in fields(cls)} - {"variables", "detector"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown run setting(s): {', '.join(sorted(extra))}")
        return cls(tuple(variables), det, **doc)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"run config is not valid JSON: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "variables": [
                {"name": v.name, "min_detectable": v.spec.min_detectable, "max_detectable": v.spec.max_detectable,
                 "zero_is_impossible": v.spec.zero_is_impossible, "transform": v.transform,
                 "direction": v.direction, "covariates": list(v.covariates)}
                for v in self.variables
            ],
            "detector": {f.name: getattr(self.detector, f.name) for f in fields(DetectorConfig)},
            "models": list(self.models),
            "modes": list(self.modes),
            "arima_order": None if self.arima_order is None else list(self.arima_order),
            "feature_methods": list(self.feature_methods),
            "feature_transforms": list(self.feature_transforms),
            "derivative_scheme": self.derivative_scheme,
            "plots": self.plots,
        }


# -- model fitting -------------------------------------------------------------

def fit_model(choice: str, train: np.ndarray, config: RunConfig, transform: str, train_Z=None):
    """Fit one of ``MODEL_CHOICES`` on an already-transformed training series."""
    det = config.detector
    if choice == "naive":
        return fit_naive(train, det.s_floor, transform)
    if choice == "linear_ar":
        p = select_ar_order(train, det.p_max)
        return fit_linear_ar(train, p, det.s_floor, "diff-log")
    if choice == "arima":
        if config.arima_order is not None:
            return fit_arima(train, *config.arima_order, det.s_floor, transform)[0]
        return auto_arima(train, det.p_max, det.d_max, det.q_max, det.s_floor, transform)[0]
    if choice == "regarima":
        return fit_regarima(train, train_Z, det.p_max, det.d_max, det.q_max, det.s_floor, transform)[0]
    raise ConfigError(f"unknown model {choice!r}")


def method_label(model) -> str:
    if model.kind == "Naive":
        return "Naive"
    return f"{model.kind}({model.p},{model.d},{model.q})"


# -- evaluation -----------------------------------------------------------------

def evaluate_flags(frame: SeriesFrame, flagged: np.ndarray, findings, name: str, trace=None) -> EvalReport:
    """Matrix over the non-rule observations, then rule findings folded into TP/FP."""
    rule_ts = {f.timestamp.tolist() for f in findings}
    is_rule = np.array([t in rule_ts for t in frame.timestamps.tolist()], dtype=bool)
    model_part = {k: v for k, v in frame.labels.items() if k.tolist() not in rule_ts}
    matrix = build_confusion(frame.timestamps[~is_rule], np.asarray(flagged)[~is_rule], model_part)
    labelled = {k.tolist() for k in frame.labels}
    hits = sum(t in labelled for t in rule_ts)
    matrix = fold_class2(matrix, hits, len(rule_ts) - hits)
    report = metrics(matrix)
    combined = np.asarray(flagged) | is_rule
    return replace(
        report,
        name=name,
        rmse=rmse(trace) if trace is not None and np.any(~trace.warmup) else None,
        per_type=per_type_report(frame.timestamps, combined, frame.labels),
    )


def flag_rows(variable: str, method: str, timestamps, flagged, source, findings) -> list[tuple]:
    rule_type = {f.timestamp.tolist(): f.type_code for f in findings}
    rows = []
    for t, f, s in zip(np.asarray(timestamps, dtype="datetime64[s]"), flagged, source):
        code = rule_type.get(t.tolist(), "")
        if code:
            f, s = True, "rule"
        rows.append((str(t), variable, method, int(bool(f)), code, s if f else ""))
    return rows


def flags_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FLAG_COLUMNS)
    w.writerows(rows)
    return buf.getvalue()


def scores_to_csv(scores: OutlierScoreSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp", "score", "flagged", "threshold"])
    for t, s, f in zip(scores.timestamps, scores.scores, scores.flagged):
        w.writerow([str(t), repr(float(s)), int(f), repr(float(scores.threshold))])
    return buf.getvalue()


# -- features -------------------------------------------------------------------

def feature_matrix(frames: dict, config: RunConfig, transform: str) -> FeatureMatrix:
    """Normalised matrix with one column per variable on the common timestamps."""
    common = set.intersection(*(set(f.timestamps.tolist()) for f in frames.values()))
    ts = np.array(sorted(common), dtype="datetime64[s]")
    columns = {}
    for name, frame in frames.items():
        keep = np.isin(frame.timestamps, ts)
        x = frame.values[keep]
        v = config.variable(name)
        y = transform_log(x) if v.transform == "log" else x
        if transform != "log":
            y = transform_derivative(y, config.derivative_scheme)
        if transform == "os-derivative":
            y = transform_one_sided(y, v.direction)
        columns[f"{name}:{transform}"] = y
    return normalize_columns(FeatureMatrix.from_columns(ts, columns))


# -- plots ---------------------------------------------------------------------

CONFUSION_COLOURS = {"TN": "#9e9e9e", "FN": "#e69f00", "FP": "#0072b2", "TP": "#d55e00"}


def confusion_classes(flagged, truth) -> np.ndarray:
    f, t = np.asarray(flagged, bool), np.asarray(truth, bool)
    out = np.full(len(f), "TN", dtype="<U2")
    out[f & t] = "TP"
    out[f & ~t] = "FP"
    out[~f & t] = "FN"
    return out


def emit_plot(item, path, labels=None, title: str = "") -> Path:
    """Write an SVG of a detection trace or score set, one marker per point
    coloured by confusion class; each class is a group with id ``points-<class>``."""
    import matplotlib
    from matplotlib.figure import Figure

    if isinstance(item, DetectionTrace):
        x, y, flagged = item.timestamps, item.observed, item.flagged
        ylabel = "value (model scale)"
    elif isinstance(item, OutlierScoreSet):
        if item.timestamps is None:
            raise ConfigError("score set has no timestamps to plot against")
        x, y, flagged = item.timestamps, item.scores, item.flagged
        ylabel = f"{item.method} score"
    else:
        raise ConfigError("emit_plot takes a DetectionTrace or an OutlierScoreSet")
    if len(x) == 0:
        raise DataError("nothing to plot")
    labelled = {k.tolist() for k in (labels or {})}
    truth = np.array([t in labelled for t in np.asarray(x, dtype="datetime64[s]").tolist()], dtype=bool)
    classes = confusion_classes(flagged, truth)
    xs = np.asarray(x, dtype="datetime64[s]").astype("datetime64[ms]").astype(object)

    with matplotlib.rc_context({"svg.hashsalt": "wqad", "svg.fonttype": "path"}):
        fig = Figure(figsize=(10, 4))
        ax = fig.add_subplot()
        if isinstance(item, DetectionTrace):
            ok = np.isfinite(item.forecast)
            ax.fill_between(xs, np.where(ok, item.lower, np.nan), np.where(ok, item.upper, np.nan),
                            color="#cfe2f3", linewidth=0, label="prediction interval", gid="pi-band")
            sub = item.substituted
            if np.any(sub):
                ax.scatter(xs[sub], item.used_value[sub], marker="x", s=18, color="black",
                           label="substituted", gid="substituted", zorder=4)
        else:
            if np.isfinite(item.threshold):
                ax.axhline(item.threshold, color="black", linestyle="--", linewidth=0.8, label="threshold")
        for cls, colour in CONFUSION_COLOURS.items():
            m = classes == cls
            if np.any(m):
                ax.scatter(xs[m], y[m], s=6, color=colour, label=cls, gid=f"points-{cls}", zorder=3)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend(loc="upper right", fontsize="small")
        path = Path(path)
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        except OSError as exc:
            raise DataError(f"cannot write plot {path}: {exc.strerror}") from None
    return path


# -- orchestration ------------------------------------------------------------

@dataclass
class PipelineResult:
    findings: dict = field(default_factory=dict)        # variable -> [RuleFinding]
    models: dict = field(default_factory=dict)          # (variable, choice) -> ForecastModel
    traces: dict = field(default_factory=dict)          # (variable, method) -> DetectionTrace
    scores: dict = field(default_factory=dict)          # (method, transform) -> OutlierScoreSet
    reports: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    plots: list = field(default_factory=list)

    @property
    def flags_csv(self) -> str:
        return flags_to_csv(self.flags)

    @property
    def reports_csv(self) -> str:
        return reports_to_csv(self.reports)

    @property
    def reports_text(self) -> str:
        return reports_to_table(self.reports)


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name).strip("_")


def run_pipeline(config: RunConfig, frames: dict, out_dir=None) -> PipelineResult:
    """Run every configured stage on ``frames`` (variable -> SeriesFrame)."""
    with stage("load"):
        if not frames:
            raise DataError("no input series")
        missing = [v for v in config.variable_names if v not in frames]
        if missing:
            raise ConfigError(f"input lacks configured variable(s): {', '.join(missing)}")
        frames = {v: frames[v] for v in config.variable_names}
        for f in frames.values():
            if len(f) == 0:
                raise DataError(f"variable {f.name!r} has no observations")

    res = PipelineResult()
    with stage("rules"):
        for name, frame in frames.items():
            res.findings[name] = run_rules(frame, config.variable(name).spec, config.detector)

    with stage("preprocess"):
        clean = {}
        for name, frame in frames.items():
            if config.variable(name).transform == "identity":
                clean[name] = frame
            else:
                clean[name] = frame.with_values(sanitize_nonpositive(frame.values)[0])

    for name, frame in clean.items():
        v = config.variable(name)
        findings = res.findings[name]
        Z = None
        if "regarima" in config.models:
            with stage(f"covariates:{name}"):
                cols = [
                    apply_transform(interpolate_covariate(frame, clean[c]), config.variable(c).transform)
                    for c in v.covariates
                ]
                Z = np.column_stack(cols)
        for choice in config.models:
            transform = "diff-log" if choice == "linear_ar" else v.transform
            with stage(f"fit:{name}:{choice}"):
                # out-of-range values are known from the rules alone, so keep them out of s
                beyond = [f.timestamp for f in findings if f.type_code == "G"]
                mask = training_mask(frame, beyond)
                train = build_training_set(frame, transform, beyond)
                model = fit_model(choice, train, config, transform, Z[mask] if choice == "regarima" else None)
            res.models[(name, choice)] = model
            for mode in config.modes:
                method = f"{method_label(model)}:{mode}"
                with stage(f"detect:{name}:{method}"):
                    trace = run_detection(frame, model, mode, findings, Z if choice == "regarima" else None,
                                          config.detector, method)
                res.traces[(name, method)] = trace
                with stage(f"evaluate:{name}:{method}"):
                    res.reports.append(evaluate_flags(frames[name], trace.pi_flagged, findings, f"{name} {method}", trace))
                res.flags += flag_rows(name, method, frame.timestamps, trace.flagged, trace.source, findings)

    for transform in config.feature_transforms if config.feature_methods else ():
        with stage(f"features:{transform}"):
            matrix = feature_matrix(clean, config, transform)
        for fmethod in config.feature_methods:
            with stage(f"features:{fmethod}:{transform}"):
                scores = feature_detect(matrix, fmethod, config.detector)
            scores = replace(scores, transform=transform)
            res.scores[(fmethod, transform)] = scores
            hit_ts = set(matrix.timestamps[scores.flagged].tolist())
            method = f"{fmethod}:{transform}"
            for name, frame in frames.items():
                flagged = np.array([t in hit_ts for t in frame.timestamps.tolist()], dtype=bool)
                with stage(f"evaluate:{name}:{method}"):
                    res.reports.append(evaluate_flags(frame, flagged, res.findings[name], f"{name} {method}"))
                source = np.where(flagged, "feature", "")
                res.flags += flag_rows(name, method, frame.timestamps, flagged, source, res.findings[name])

    if out_dir is not None:
        with stage("write"):
            write_artifacts(res, config, frames, Path(out_dir))
    return res


def write_artifacts(res: PipelineResult, config: RunConfig, frames: dict, out: Path) -> None:
    try:
        for sub in ("traces", "models", "scores") + (("plots",) if config.plots else ()):
            (out / sub).mkdir(parents=True, exist_ok=True)
        (out / "flags.csv").write_text(res.flags_csv)
        (out / "reports.csv").write_text(res.reports_csv)
        (out / "reports.txt").write_text(res.reports_text)
        for (name, choice), model in res.models.items():
            (out / "models" / f"{_safe(name)}__{choice}.json").write_text(model.to_json())
        for (name, method), trace in res.traces.items():
            stem = f"{_safe(name)}__{_safe(method)}"
            (out / "traces" / f"{stem}.csv").write_text(trace.to_csv())
            if config.plots:
                res.plots.append(emit_plot(trace, out / "plots" / f"{stem}.svg", frames[name].labels, f"{name} {method}"))
        for (fmethod, transform), scores in res.scores.items():
            stem = f"{_safe(fmethod)}__{_safe(transform)}"
            (out / "scores" / f"{stem}.csv").write_text(scores_to_csv(scores))
            if config.plots:
                labels = {}
                for f in frames.values():
                    labels.update(f.labels)
                res.plots.append(emit_plot(scores, out / "plots" / f"{stem}.svg", labels, f"{fmethod} {transform}"))
    except OSError as exc:
        raise DataError(f"cannot write artifacts under {out}: {exc.strerror}") from None
