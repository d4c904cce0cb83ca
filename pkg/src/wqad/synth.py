"""Synthetic positive series and labelled anomaly injection for types A-L.

Base series are the exponential of a Gaussian process, so ``log`` recovers
the process.  Injection magnitudes are in units of the base innovation
standard deviation on the log scale (or 1 when that is zero), except for F
and G which set literal raw values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import TYPE_CODES, AnomalyLabel, ConfigError, DataError, InvalidTypeError, SeriesFrame

BASE_KINDS = ("random-walk", "ar1", "seasonal")
DEFAULT_START = np.datetime64("2020-01-01T00:00:00", "s")
SINGLE_POINT_TYPES = ("A", "J")
_BASE_DEFAULTS = {"level": math.log(10.0), "drift": 0.0, "phi": 0.8, "sigma": 0.05, "amplitude": 0.0, "period": 24.0}


class PlanError(ConfigError):
    pass


@dataclass(frozen=True)
class Injection:
    type_code: str
    start_index: int
    length: int = 1
    magnitude: float = 0.0

    def __post_init__(self):
        if self.type_code not in TYPE_CODES:
            raise InvalidTypeError(f"unknown anomaly type {self.type_code!r}")
        if self.start_index < 0 or self.length < 1:
            raise PlanError("injections need start_index >= 0 and length >= 1")
        if self.type_code in SINGLE_POINT_TYPES and self.length != 1:
            raise PlanError(f"type {self.type_code} is a single-point anomaly")

    @property
    def touched(self) -> range:
        """Indices this injection alters, deletes or labels."""
        extra = 1 if self.type_code == "K" else 0
        return range(self.start_index, self.start_index + self.length + extra)

    @property
    def labelled_count(self) -> int:
        return 1 if self.type_code == "K" else self.length


@dataclass(frozen=True)
class InjectionPlan:
    base_kind: str = "ar1"
    base_params: dict = field(default_factory=dict)
    injections: tuple = ()

    def __post_init__(self):
        if self.base_kind not in BASE_KINDS:
            raise PlanError(f"base_kind must be one of {BASE_KINDS}")
        unknown = set(self.base_params) - set(_BASE_DEFAULTS)
        if unknown:
            raise PlanError(f"unknown base parameter(s): {', '.join(sorted(unknown))}")
        injections = tuple(i if isinstance(i, Injection) else Injection(**i) for i in self.injections)
        ordered = sorted(injections, key=lambda i: i.start_index)
        for a, b in zip(ordered, ordered[1:]):
            if a.touched.stop > b.start_index:
                raise PlanError(
                    f"injections {a.type_code}@{a.start_index} and {b.type_code}@{b.start_index} overlap"
                )
        object.__setattr__(self, "injections", injections)
        object.__setattr__(self, "base_params", {**_BASE_DEFAULTS, **dict(self.base_params)})

    @property
    def unit(self) -> float:
        s = float(self.base_params["sigma"])
        return s if s > 0 else 1.0

    @property
    def labelled_count(self) -> int:
        return sum(i.labelled_count for i in self.injections)

    def to_dict(self) -> dict:
        return {
            "base_kind": self.base_kind,
            "base_params": dict(self.base_params),
            "injections": [vars(i).copy() for i in self.injections],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "InjectionPlan":
        try:
            return cls(doc.get("base_kind", "ar1"), doc.get("base_params", {}), tuple(doc.get("injections", ())))
        except TypeError as exc:
            raise PlanError(f"malformed injection plan: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "InjectionPlan":
        return cls.from_dict(json.loads(text))


def hourly_timestamps(n: int, start=DEFAULT_START, spacing_minutes: int = 60) -> np.ndarray:
    return np.datetime64(start, "s") + np.arange(n) * np.timedelta64(spacing_minutes * 60, "s")


def generate_base(kind: str, params: dict | None, n: int, seed: int, name: str = "x") -> SeriesFrame:
    """Hourly series ``exp(level + g_t)`` for a Gaussian process ``g``.

    ``random-walk`` accumulates ``drift + sigma * e_t``; ``ar1`` is a
    stationary AR(1) with coefficient ``phi``; ``seasonal`` adds a sinusoid
    of ``amplitude`` and ``period`` (in steps) to the AR(1).
    """
    if n <= 0:
        raise PlanError("n must be positive")
    if kind not in BASE_KINDS:
        raise PlanError(f"base_kind must be one of {BASE_KINDS}")
    p = {**_BASE_DEFAULTS, **(params or {})}
    sigma, phi = float(p["sigma"]), float(p["phi"])
    if sigma < 0:
        raise PlanError("sigma must be non-negative")
    if kind != "random-walk" and not -1 < phi < 1:
        raise PlanError("phi must lie in (-1, 1) for a stationary base")
    if kind == "seasonal" and p["period"] <= 0:
        raise PlanError("period must be positive")
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n) * sigma
    if kind == "random-walk":
        g = np.cumsum(p["drift"] + e)
    else:
        g = np.empty(n)
        g[0] = e[0] / math.sqrt(1 - phi * phi)
        for t in range(1, n):
            g[t] = phi * g[t - 1] + e[t]
        if kind == "seasonal":
            g += p["amplitude"] * np.sin(2 * np.pi * np.arange(n) / p["period"])
    return SeriesFrame.from_arrays(name, hourly_timestamps(n), np.exp(p["level"] + g))


def _apply_log(y: np.ndarray, inj: Injection, unit: float) -> None:
    s, L, m = inj.start_index, inj.length, inj.magnitude * unit
    span = slice(s, s + L)
    j = np.arange(L)
    code = inj.type_code
    if code in ("A", "J"):
        y[s] += m
    elif code == "B":
        y[span] = y[s]
    elif code in ("C", "D"):
        y[span] += m
    elif code == "E":
        y[span] += m * np.where(j % 2 == 0, 1.0, -1.0)
    elif code == "H":
        y[span] += m * (j + 1) / L
    elif code == "I":
        y[span] += m * (j % 2 == 0)
    elif code == "L":
        y[span] += m * np.sin(np.pi * (j + 0.5) / L)


def inject(frame: SeriesFrame, plan: InjectionPlan) -> SeriesFrame:
    """Apply every injection in ``plan`` to ``frame`` and label what it touched.

    K removes ``length`` observations and labels the first one after the gap.
    Existing labels on untouched observations are kept.
    """
    n = len(frame)
    for inj in plan.injections:
        if inj.touched.stop > n:
            raise PlanError(f"{inj.type_code} injection at {inj.start_index} runs past the series end ({n})")
    if plan.injections and np.any(frame.values <= 0):
        raise DataError("injection works on the log scale; the base series must be positive")

    y = np.log(frame.values) if plan.injections else frame.values.copy()
    for inj in plan.injections:
        _apply_log(y, inj, plan.unit)
    values = np.exp(y) if plan.injections else y
    labels = dict(frame.labels)
    keep = np.ones(n, dtype=bool)
    for inj in plan.injections:
        s, L = inj.start_index, inj.length
        if inj.type_code == "F":
            values[s:s + L] = -abs(inj.magnitude)
        elif inj.type_code == "G":
            values[s:s + L] = inj.magnitude
        if inj.type_code == "K":
            keep[s:s + L] = False
            labelled = [s + L]
        else:
            labelled = range(s, s + L)
        for i in labelled:
            labels[frame.timestamps[i]] = AnomalyLabel(inj.type_code)
    for t in frame.timestamps[~keep]:
        labels.pop(t, None)
    return SeriesFrame.from_arrays(frame.name, frame.timestamps[keep], values[keep], labels)


def synthesize(plan: InjectionPlan, n: int, seed: int, name: str = "x") -> SeriesFrame:
    return inject(generate_base(plan.base_kind, plan.base_params, n, seed, name), plan)
