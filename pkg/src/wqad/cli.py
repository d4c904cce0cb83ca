"""``wqad`` command line: rules, fit, detect, features, evaluate, inject, plot, pipeline.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from .core import DEFAULT_SENSOR_SPECS, AnomalyError, ConfigError, DataError, DetectorConfig, SensorSpec, to_datetime64
from .detect import MODES, DetectionTrace, run_detection
from .evaluate import reports_to_csv, reports_to_table
from .features import METHODS as FEATURE_METHODS, OutlierScoreSet, detect as feature_detect
from .forecast import ForecastModel
from .pipeline import (
    FEATURE_TRANSFORMS,
    MODEL_CHOICES,
    ColumnMapping,
    RunConfig,
    VariableConfig,
    build_training_set,
    emit_plot,
    evaluate_flags,
    feature_matrix,
    fit_model,
    flag_rows,
    flags_to_csv,
    frames_to_csv,
    interpolate_covariate,
    read_csv_text,
    run_pipeline,
    sanitize_nonpositive,
    scores_to_csv,
    training_mask,
)
from .rules import RuleFinding, run_rules
from .synth import InjectionPlan, generate_base, inject


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{self.prog}: error: {message}\n")


def _emit(text: str, out) -> None:
    if out:
        try:
            Path(out).write_text(text)
        except OSError as exc:
            raise DataError(f"cannot write {out}: {exc.strerror}") from None
    else:
        sys.stdout.write(text)


def _read(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None


def _frames(args, variables=None) -> dict:
    text = _read(args.input)
    header = next(csv.reader(io.StringIO(text)), None)
    if header is None:
        raise DataError(f"{args.input} is empty")
    mapping = ColumnMapping.infer(header, args.timestamp_column, args.timestamp_format)
    return read_csv_text(text, mapping, variables)


def _spec(args, variable: str) -> SensorSpec:
    base = DEFAULT_SENSOR_SPECS.get(variable)
    lo = args.min if args.min is not None else (base.min_detectable if base else None)
    hi = args.max if args.max is not None else (base.max_detectable if base else None)
    if lo is None or hi is None:
        raise ConfigError(f"{variable}: no default sensor range; pass --min and --max")
    zero_bad = False if args.zero_possible else (base.zero_is_impossible if base else True)
    return SensorSpec(variable, lo, hi, zero_bad)


def _detector(args) -> DetectorConfig:
    kw = {}
    for name in ("alpha", "max_gap_minutes", "k_neighbours", "evt_alpha", "p_max", "d_max", "q_max"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    return DetectorConfig(**kw)


def _covariates(frames: dict, target: str, names) -> np.ndarray | None:
    if not names:
        return None
    target_frame = frames[target]
    cols = []
    for c in names:
        cov = frames[c].with_values(sanitize_nonpositive(frames[c].values)[0])
        cols.append(np.log(interpolate_covariate(target_frame, cov)))
    return np.column_stack(cols)


# -- subcommands --------------------------------------------------------------

def cmd_rules(args) -> None:
    frames = _frames(args, args.variable)
    det = _detector(args)
    rows = []
    for name, frame in frames.items():
        findings = run_rules(frame, _spec(args, name), det)
        flagged = np.zeros(len(frame), dtype=bool)
        rows += flag_rows(name, "rules", frame.timestamps, flagged, np.full(len(frame), ""), findings)
    _emit(flags_to_csv(rows), args.out)


def cmd_fit(args) -> None:
    frames = _frames(args)
    frame = frames[args.variable]
    if args.transform != "identity":
        frame = frame.with_values(sanitize_nonpositive(frame.values)[0])
    variables = [VariableConfig(n, _spec(args, n) if n == args.variable else DEFAULT_SENSOR_SPECS.get(n, SensorSpec(n, -1e300, 1e300)),
                                transform=args.transform if n == args.variable else "log",
                                covariates=tuple(args.covariate) if n == args.variable else ())
                 for n in frames]
    config = RunConfig(tuple(variables), _detector(args), (args.model,), ("AD",),
                       tuple(args.order) if args.order else None)
    transform = "diff-log" if args.model == "linear_ar" else args.transform
    beyond = [f.timestamp for f in run_rules(frame, _spec(args, args.variable), config.detector) if f.type_code == "G"]
    train = build_training_set(frame, transform, beyond)
    Z = None
    if args.model == "regarima":
        Z = _covariates(frames, args.variable, args.covariate)[training_mask(frame, beyond)]
    model = fit_model(args.model, train, config, transform, Z)
    _emit(model.to_json() + "\n", args.out)


def cmd_detect(args) -> None:
    model = ForecastModel.from_json(_read(args.model_file))
    frames = _frames(args)
    frame = frames[args.variable]
    findings = run_rules(frame, _spec(args, args.variable), _detector(args))
    if model.training_transform != "identity":
        frame = frame.with_values(sanitize_nonpositive(frame.values)[0])
    Z = _covariates(frames, args.variable, args.covariate) if model.kind == "RegARIMA" else None
    trace = run_detection(frame, model, args.mode, findings, Z, _detector(args))
    _emit(trace.to_csv(), args.out)


def cmd_features(args) -> None:
    frames = _frames(args, args.variable)
    variables = tuple(
        VariableConfig(n, _spec(args, n), direction=args.direction) for n in frames
    )
    config = RunConfig(variables, _detector(args), (), ("AD",), derivative_scheme=args.scheme)
    clean = {n: f.with_values(sanitize_nonpositive(f.values)[0]) for n, f in frames.items()}
    matrix = feature_matrix(clean, config, args.transform)
    scores = feature_detect(matrix, args.method, config.detector)
    _emit(scores_to_csv(scores), args.out)


def _read_flags(path, variable: str, method: str | None):
    rows = list(csv.DictReader(io.StringIO(_read(path))))
    if not rows:
        raise DataError(f"{path} has no flag rows")
    if "variable" not in rows[0]:
        # a detection trace
        rows = [dict(r, variable=variable, method=method or "trace", type_code="") for r in rows]
    rows = [r for r in rows if r["variable"] == variable and (method is None or r["method"] == method)]
    methods = sorted({r["method"] for r in rows})
    if not methods:
        raise DataError(f"no flag rows for {variable!r}" + (f" and method {method!r}" if method else ""))
    return {m: [r for r in rows if r["method"] == m] for m in methods}


def cmd_evaluate(args) -> None:
    frame = _frames(args, [args.variable])[args.variable]
    reports = []
    for method, rows in _read_flags(args.flags, args.variable, args.method).items():
        index = {to_datetime64(r["timestamp"]).tolist(): r for r in rows}
        flagged = np.zeros(len(frame), dtype=bool)
        findings = []
        for i, t in enumerate(frame.timestamps.tolist()):
            r = index.get(t)
            if r is None:
                continue
            if r["source"] == "rule":
                findings.append(RuleFinding(frame.timestamps[i], r.get("type_code") or "K", "from flag file"))
            flagged[i] = r["flagged"] == "1" and r["source"] != "rule"
        reports.append(evaluate_flags(frame, flagged, findings, f"{args.variable} {method}"))
    _emit(reports_to_csv(reports) if args.format == "csv" else reports_to_table(reports), args.out)


def cmd_inject(args) -> None:
    plan = InjectionPlan.from_json(_read(args.plan))
    frame = inject(generate_base(plan.base_kind, plan.base_params, args.n, args.seed, args.variable), plan)
    _emit(frames_to_csv({args.variable: frame}), args.out)


def cmd_plot(args) -> None:
    labels = {}
    if args.input:
        frames = _frames(args, [args.variable] if args.variable else None)
        for f in frames.values():
            labels.update(f.labels)
    text = _read(args.source)
    header = next(csv.reader(io.StringIO(text)), [])
    if "score" in header:
        rows = list(csv.DictReader(io.StringIO(text)))
        scores = np.array([float(r["score"]) for r in rows])
        item = OutlierScoreSet(
            scores, "score", float(rows[0]["threshold"]) if rows else float("inf"),
            np.array([r["flagged"] == "1" for r in rows], dtype=bool),
            np.array([r["timestamp"] for r in rows], dtype="datetime64[s]"),
        )
    else:
        item = DetectionTrace.from_csv(text, args.variable or "")
    emit_plot(item, args.out, labels)


def _synthetic_frames(plan_doc: dict, config: RunConfig, n: int, seed: int) -> dict:
    """Per-variable plans under ``variables``; a bare plan goes to the first variable."""
    if "variables" in plan_doc:
        plans = {v: InjectionPlan.from_dict(d) for v, d in plan_doc["variables"].items()}
    else:
        plans = {config.variable_names[0]: InjectionPlan.from_dict(plan_doc)}
    default = next(iter(plans.values()))
    frames = {}
    for i, name in enumerate(config.variable_names):
        plan = plans.get(name, InjectionPlan(default.base_kind, default.base_params))
        frames[name] = inject(generate_base(plan.base_kind, plan.base_params, n, seed + i, name), plan)
    return frames


def cmd_pipeline(args) -> None:
    doc = json.loads(_read(args.config)) if args.config else {}
    if args.variable:
        doc["variables"] = [{"name": v} for v in args.variable]
    for key in ("models", "modes", "feature_methods", "feature_transforms"):
        value = getattr(args, key)
        if value is not None:
            doc[key] = value
    if args.arima_order:
        doc["arima_order"] = args.arima_order
    if args.no_plots:
        doc["plots"] = False
    det = dict(doc.get("detector", {}))
    for name in ("alpha", "max_gap_minutes", "k_neighbours", "evt_alpha", "p_max", "d_max", "q_max"):
        v = getattr(args, name, None)
        if v is not None:
            det[name] = v
    doc["detector"] = det
    try:
        config = RunConfig.from_dict(doc)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(exc)) from None
    if bool(args.input) == bool(args.plan):
        raise ConfigError("give exactly one of --input or --plan")
    if args.input:
        frames = _frames(args, config.variable_names)
    else:
        frames = _synthetic_frames(json.loads(_read(args.plan)), config, args.n, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "input.csv").write_text(frames_to_csv(frames))
    result = run_pipeline(config, frames, args.out)
    sys.stdout.write(result.reports_text)


# -- parser -------------------------------------------------------------------

def _input_args(p, required=True):
    p.add_argument("--input", required=required, help="wide CSV with a timestamp column")
    p.add_argument("--timestamp-column", default="timestamp")
    p.add_argument("--timestamp-format", default=None, help="strptime pattern (default ISO 8601)")


def _spec_args(p):
    p.add_argument("--min", type=float, default=None, help="lowest value the sensor can report")
    p.add_argument("--max", type=float, default=None, help="highest value the sensor can report")
    p.add_argument("--zero-possible", action="store_true", help="zero is a valid reading")
    p.add_argument("--max-gap-minutes", type=float, default=None,
                   help="gaps longer than this mark the next observation as type K (default 180)")


def _grid_args(p):
    p.add_argument("--p-max", type=int, default=None)
    p.add_argument("--d-max", type=int, default=None)
    p.add_argument("--q-max", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wqad", description="Anomaly detection for high-frequency water-quality series.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("rules", help="flag impossible, out-of-range and post-gap values")
    _input_args(p)
    _spec_args(p)
    p.add_argument("--variable", action="append", help="variable to check (repeatable; default all)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rules)

    p = sub.add_parser("fit", help="fit a forecasting model to the clean part of a series")
    _input_args(p)
    _spec_args(p)
    _grid_args(p)
    p.add_argument("--variable", required=True)
    p.add_argument("--model", choices=MODEL_CHOICES, default="naive")
    p.add_argument("--transform", choices=("log", "identity"), default="log")
    p.add_argument("--order", type=int, nargs=3, metavar=("P", "D", "Q"), help="fixed ARIMA order")
    p.add_argument("--covariate", action="append", default=[], help="covariate variable for regarima")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("detect", help="run one-step-ahead detection with a fitted model")
    _input_args(p)
    _spec_args(p)
    p.add_argument("--variable", required=True)
    p.add_argument("--model-file", required=True)
    p.add_argument("--mode", choices=MODES, default="AD")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--covariate", action="append", default=[])
    p.add_argument("--out")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("features", help="feature-space outlier scores across variables")
    _input_args(p)
    _spec_args(p)
    p.add_argument("--variable", action="append")
    p.add_argument("--method", choices=FEATURE_METHODS, default="HDoutliers")
    p.add_argument("--transform", choices=FEATURE_TRANSFORMS, default="derivative")
    p.add_argument("--scheme", choices=("backward", "central"), default="backward")
    p.add_argument("--direction", choices=("positive", "negative"), default="negative")
    p.add_argument("--k-neighbours", type=int, default=None)
    p.add_argument("--evt-alpha", type=float, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("evaluate", help="confusion-matrix report for a flag CSV or detection trace")
    _input_args(p)
    p.add_argument("--variable", required=True)
    p.add_argument("--flags", required=True, help="flag CSV or detection trace CSV")
    p.add_argument("--method", default=None)
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inject", help="generate a synthetic series with labelled anomalies")
    p.add_argument("--plan", required=True, help="injection plan JSON")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variable", default="turbidity")
    p.add_argument("--out")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("plot", help="SVG of a detection trace or score file")
    _input_args(p, required=False)
    p.add_argument("--source", required=True, help="trace CSV or score CSV")
    p.add_argument("--variable", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("pipeline", help="rules, models, features and evaluation in one run")
    _input_args(p, required=False)
    _grid_args(p)
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--plan", help="injection plan JSON; generates the input instead of --input")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variable", action="append")
    p.add_argument("--models", nargs="+", choices=MODEL_CHOICES)
    p.add_argument("--modes", nargs="+", choices=MODES)
    p.add_argument("--arima-order", type=int, nargs=3, metavar=("P", "D", "Q"))
    p.add_argument("--feature-methods", nargs="*", choices=FEATURE_METHODS)
    p.add_argument("--feature-transforms", nargs="+", choices=FEATURE_TRANSFORMS)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--max-gap-minutes", type=float, default=None)
    p.add_argument("--k-neighbours", type=int, default=None)
    p.add_argument("--evt-alpha", type=float, default=None)
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except AnomalyError as exc:
        sys.stderr.write(f"wqad {args.command}: {exc}\n")
        return exc.exit_code
    except json.JSONDecodeError as exc:
        sys.stderr.write(f"wqad {args.command}: invalid JSON: {exc}\n")
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
