"""Shared data types for sensor series, anomaly labels and detector settings.

Timestamps are held as ``numpy.datetime64`` values at second resolution and
interpreted as UTC.  Irregular sampling is preserved as-is.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping, Sequence

import numpy as np

TYPE_CODES = tuple("ABCDEFGHIJKL")

_CLASS_OF_TYPE = {
    "A": 1, "D": 1, "I": 1, "J": 1,
    "F": 2, "G": 2, "K": 2,
    "B": 3, "C": 3, "E": 3, "H": 3, "L": 3,
}

PROVENANCES = ("ground-truth", "rule", "regression", "feature")


class AnomalyError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 2


class ConfigError(AnomalyError, ValueError):
    exit_code = 1


class DataError(AnomalyError, ValueError):
    exit_code = 2


class InvalidTypeError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class AlignmentError(DataError):
    pass


class TransformError(DataError):
    pass


class NumericError(AnomalyError, ArithmeticError):
    exit_code = 3


class DegenerateSeriesError(NumericError):
    pass


class InvalidDofError(NumericError):
    pass


def classify_type_to_class(type_code: str) -> int:
    """Return the anomaly class (1, 2 or 3) for a type letter A-L."""
    try:
        return _CLASS_OF_TYPE[type_code]
    except (KeyError, TypeError):
        raise InvalidTypeError(f"unknown anomaly type code {type_code!r}") from None


def to_datetime64(ts) -> np.datetime64:
    """Coerce a timestamp-like value to ``datetime64[s]`` (naive values are UTC)."""
    if isinstance(ts, np.datetime64):
        return ts.astype("datetime64[s]")
    if isinstance(ts, datetime):
        if ts.tzinfo is not None:
            ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
        return np.datetime64(ts, "s")
    if isinstance(ts, (int, np.integer)):
        return np.datetime64(int(ts), "s")
    return np.datetime64(ts, "s")


@dataclass(frozen=True)
class AnomalyLabel:
    type_code: str
    provenance: str = "ground-truth"

    def __post_init__(self):
        classify_type_to_class(self.type_code)
        if self.provenance not in PROVENANCES:
            raise ConfigError(f"unknown provenance {self.provenance!r}")

    @property
    def anomaly_class(self) -> int:
        return classify_type_to_class(self.type_code)


@dataclass(frozen=True)
class Observation:
    timestamp: np.datetime64
    value: float
    quality: str | None = None


@dataclass(frozen=True)
class SeriesFrame:
    """One variable's observations plus ground-truth labels keyed by timestamp.

    The plain constructor does not check ordering so that malformed frames
    can still be inspected with :func:`validate_frame`; use
    :meth:`from_arrays` or :meth:`from_observations` to build a checked frame.
    """

    name: str
    timestamps: np.ndarray
    values: np.ndarray
    labels: Mapping[np.datetime64, AnomalyLabel] = field(default_factory=dict)
    quality: tuple | None = None

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[s]").copy()
        vals = np.asarray(self.values, dtype=float).copy()
        if ts.shape != vals.shape or ts.ndim != 1:
            raise DataError("timestamps and values must be 1-D and equally long")
        if np.isnat(ts).any():
            raise DataError("timestamps must be finite")
        ts.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(
            self, "labels", {to_datetime64(k): v for k, v in dict(self.labels).items()}
        )
        if self.quality is not None:
            q = tuple(self.quality)
            if len(q) != len(vals):
                raise DataError("quality flags must align with values")
            object.__setattr__(self, "quality", q)

    @classmethod
    def from_arrays(cls, name, timestamps, values, labels=None, quality=None) -> "SeriesFrame":
        frame = cls(name, timestamps, values, labels or {}, quality)
        problems = validate_frame(frame)
        if problems:
            raise DataError(f"invalid frame {name!r}: " + "; ".join(map(str, problems)))
        return frame

    @classmethod
    def from_observations(cls, name, observations: Iterable[Observation], labels=None) -> "SeriesFrame":
        obs = list(observations)
        quality = [o.quality for o in obs]
        return cls.from_arrays(
            name,
            [to_datetime64(o.timestamp) for o in obs],
            [o.value for o in obs],
            labels,
            None if all(q is None for q in quality) else quality,
        )

    def __len__(self) -> int:
        return len(self.values)

    @property
    def observations(self) -> list[Observation]:
        q = self.quality or (None,) * len(self)
        return [Observation(t, float(v), qq) for t, v, qq in zip(self.timestamps, self.values, q)]

    def label_codes(self) -> np.ndarray:
        """Type code per observation, empty string where unlabelled."""
        codes = np.full(len(self), "", dtype="<U1")
        index = {t: i for i, t in enumerate(self.timestamps.tolist())}
        for ts, lab in self.labels.items():
            i = index.get(ts.tolist())
            if i is not None:
                codes[i] = lab.type_code
        return codes

    def label_classes(self) -> np.ndarray:
        return np.array([_CLASS_OF_TYPE.get(c, 0) for c in self.label_codes()], dtype=int)

    def with_values(self, values) -> "SeriesFrame":
        return SeriesFrame(self.name, self.timestamps, values, self.labels, self.quality)

    def with_labels(self, labels) -> "SeriesFrame":
        return SeriesFrame(self.name, self.timestamps, self.values, labels, self.quality)

    def subset(self, mask) -> "SeriesFrame":
        mask = np.asarray(mask, dtype=bool)
        ts = self.timestamps[mask]
        keep = set(ts.tolist())
        labels = {k: v for k, v in self.labels.items() if k.tolist() in keep}
        quality = None
        if self.quality is not None:
            quality = tuple(q for q, m in zip(self.quality, mask) if m)
        return SeriesFrame(self.name, ts, self.values[mask], labels, quality)


@dataclass(frozen=True)
class ValidationFinding:
    kind: str  # "duplicate-timestamp" | "non-monotone" | "orphan-label"
    timestamp: np.datetime64
    detail: str = ""

    def __str__(self):
        return f"{self.kind} at {self.timestamp}" + (f" ({self.detail})" if self.detail else "")


def validate_frame(frame: SeriesFrame) -> list[ValidationFinding]:
    """Report ordering problems and labels that point at absent timestamps."""
    findings = []
    ts = frame.timestamps
    for i in range(1, len(ts)):
        if ts[i] == ts[i - 1]:
            findings.append(ValidationFinding("duplicate-timestamp", ts[i]))
        elif ts[i] < ts[i - 1]:
            findings.append(ValidationFinding("non-monotone", ts[i], f"follows {ts[i - 1]}"))
    present = set(ts.tolist())
    for t in sorted(frame.labels):
        if t.tolist() not in present:
            findings.append(ValidationFinding("orphan-label", t, frame.labels[t].type_code))
    return findings


def require_valid(frame: SeriesFrame) -> None:
    problems = validate_frame(frame)
    if problems:
        raise DataError(f"invalid frame {frame.name!r}: " + "; ".join(map(str, problems)))


@dataclass(frozen=True)
class SensorSpec:
    variable: str
    min_detectable: float
    max_detectable: float
    zero_is_impossible: bool = True

    def __post_init__(self):
        if not self.min_detectable < self.max_detectable:
            raise ConfigError(
                f"{self.variable}: min_detectable must be below max_detectable"
            )


# Placeholder ranges; deployments must supply their own sensor specifications.
DEFAULT_SENSOR_SPECS = {
    "turbidity": SensorSpec("turbidity", 0.0, 4000.0, True),
    "conductivity": SensorSpec("conductivity", 0.0, 200000.0, True),
    "level": SensorSpec("level", -10.0, 100.0, False),
}


@dataclass(frozen=True)
class DetectorConfig:
    alpha: float = 0.01
    max_gap_minutes: float = 180.0
    k_neighbours: int = 10
    evt_alpha: float = 0.05
    p_max: int = 5
    q_max: int = 5
    d_max: int = 2
    s_floor: float = 1e-8

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not 0 < self.evt_alpha < 1:
            raise ConfigError("evt_alpha must lie in (0, 1)")
        if not self.max_gap_minutes > 0:
            raise ConfigError("max_gap_minutes must be positive")
        if int(self.k_neighbours) != self.k_neighbours or self.k_neighbours < 1:
            raise ConfigError("k_neighbours must be a positive integer")
        for name in ("p_max", "q_max", "d_max"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not self.s_floor > 0:
            raise ConfigError("s_floor must be positive")


def as_float_array(x: Sequence[float] | np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float).ravel()
