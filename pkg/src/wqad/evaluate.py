"""Confusion matrices, predictive values, RMSE and per-type hit counts."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .core import TYPE_CODES, AlignmentError, DataError, to_datetime64


class EmptyEvaluationError(DataError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise DataError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class TypeHits:
    total: int
    hit: int


@dataclass(frozen=True)
class EvalReport:
    """Metrics for one method; ``None`` means undefined (zero denominator)."""

    matrix: ConfusionMatrix
    accuracy: float | None
    error_rate: float | None
    npv: float | None
    ppv: float | None
    rmse: float | None = None
    per_type: dict = field(default_factory=dict)
    name: str = ""


def _flag_array(timestamps: np.ndarray, flagged) -> np.ndarray:
    ts = np.asarray(timestamps, dtype="datetime64[s]")
    if isinstance(flagged, np.ndarray) and flagged.dtype == bool:
        if flagged.shape != ts.shape:
            raise AlignmentError("flag array does not align with the evaluated timestamps")
        return flagged
    wanted = {to_datetime64(t).tolist() for t in flagged}
    present = set(ts.tolist())
    stray = wanted - present
    if stray:
        raise AlignmentError(f"{len(stray)} flagged timestamp(s) are not among the evaluated ones")
    return np.array([t in wanted for t in ts.tolist()], dtype=bool)


def _truth_array(timestamps: np.ndarray, labels) -> np.ndarray:
    ts = np.asarray(timestamps, dtype="datetime64[s]").tolist()
    index = {t: i for i, t in enumerate(ts)}
    truth = np.zeros(len(ts), dtype=bool)
    for t in labels:
        i = index.get(to_datetime64(t).tolist())
        if i is None:
            raise AlignmentError(f"label at {t} is not among the evaluated timestamps")
        truth[i] = True
    return truth


def build_confusion(timestamps, flagged, labels) -> ConfusionMatrix:
    """Compare per-observation flags with ground truth (any A-L label is an anomaly).

    ``flagged`` is either a boolean array aligned with ``timestamps`` or a
    collection of flagged timestamps; ``labels`` maps timestamp to label.
    """
    f = _flag_array(timestamps, flagged)
    t = _truth_array(timestamps, labels)
    return ConfusionMatrix(
        tp=int(np.sum(f & t)), fp=int(np.sum(f & ~t)), tn=int(np.sum(~f & ~t)), fn=int(np.sum(~f & t))
    )


def fold_class2(matrix: ConfusionMatrix, rule_hits: int, rule_false: int = 0) -> ConfusionMatrix:
    """Add rule-detected Class 2 anomalies (kept out of ``matrix``) to its TP.

    ``rule_false`` counts rule findings on unlabelled observations, if any.
    """
    if rule_hits < 0 or rule_false < 0:
        raise DataError("rule counts must be non-negative")
    return replace(matrix, tp=matrix.tp + rule_hits, fp=matrix.fp + rule_false)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def metrics(matrix: ConfusionMatrix) -> EvalReport:
    n = matrix.total
    if n == 0:
        raise EmptyEvaluationError("no observations were evaluated")
    return EvalReport(
        matrix,
        accuracy=(matrix.tp + matrix.tn) / n,
        error_rate=(matrix.fp + matrix.fn) / n,
        npv=_ratio(matrix.tn, matrix.tn + matrix.fn),
        ppv=_ratio(matrix.tp, matrix.tp + matrix.fp),
    )


def rmse(trace=None, observed=None, forecast=None) -> float:
    """Root mean squared one-step error over non-warm-up records."""
    if trace is not None:
        keep = ~np.asarray(trace.warmup) & np.isfinite(trace.forecast)
        observed, forecast = trace.observed[keep], trace.forecast[keep]
    err = np.asarray(observed, dtype=float) - np.asarray(forecast, dtype=float)
    if err.size == 0:
        raise EmptyEvaluationError("RMSE needs at least one forecast")
    return math.sqrt(float(np.mean(err**2)))


def per_type_report(timestamps, flagged, labels) -> dict:
    f = _flag_array(timestamps, flagged)
    index = {t: i for i, t in enumerate(np.asarray(timestamps, dtype="datetime64[s]").tolist())}
    counts: dict = {}
    for ts, lab in labels.items():
        i = index.get(to_datetime64(ts).tolist())
        if i is None:
            raise AlignmentError(f"label at {ts} is not among the evaluated timestamps")
        total, hit = counts.get(lab.type_code, (0, 0))
        counts[lab.type_code] = (total + 1, hit + int(f[i]))
    return {code: TypeHits(*counts[code]) for code in TYPE_CODES if code in counts}


def round_half_up(x: float, places: int = 2) -> float:
    return float(Decimal(repr(float(x))).quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP))


def display(x: float | None, places: int = 2) -> str:
    return "n/a" if x is None else f"{round_half_up(x, places):.{places}f}"


REPORT_COLUMNS = ("name", "TN", "FN", "FP", "TP", "accuracy", "error_rate", "NPV", "PPV", "RMSE")


def _full(x):
    return "undefined" if x is None else repr(float(x))


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS + ("per_type",))
    for r in reports:
        m = r.matrix
        per_type = ";".join(f"{k}:{v.hit}/{v.total}" for k, v in r.per_type.items())
        w.writerow([
            r.name, m.tn, m.fn, m.fp, m.tp, _full(r.accuracy), _full(r.error_rate),
            _full(r.npv), _full(r.ppv), "" if r.rmse is None else repr(float(r.rmse)), per_type,
        ])
    return buf.getvalue()


def reports_to_table(reports) -> str:
    """Fixed-width text table in TN/FN/FP/TP/Accuracy/Error/NPV/PPV/RMSE order."""
    head = ["Method", "TN", "FN", "FP", "TP", "Accuracy", "Error rate", "NPV", "PPV", "RMSE"]
    rows = []
    for r in reports:
        m = r.matrix
        rows.append([
            r.name, str(m.tn), str(m.fn), str(m.fp), str(m.tp), display(r.accuracy),
            display(r.error_rate), display(r.npv), display(r.ppv),
            "" if r.rmse is None else display(r.rmse),
        ])
    widths = [max(len(str(c)) for c in col) for col in zip(head, *rows)]
    fmt = lambda row: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
    lines = [fmt(head), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows]
    hits = [
        f"{r.name}: " + ", ".join(f"{k} {v.hit}/{v.total}" for k, v in r.per_type.items())
        for r in reports if r.per_type
    ]
    if hits:
        lines += ["", "Anomalies classified correctly, by type (hit/total):"] + hits
    return "\n".join(lines) + "\n"
