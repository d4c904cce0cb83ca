"""If-then classification of impossible (F), out-of-range (G) and
post-gap (K) observations.

When one observation trips several rules a single finding is kept, with
precedence F > G > K.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigError, DetectorConfig, SensorSpec, SeriesFrame, require_valid

_PRECEDENCE = {"F": 0, "G": 1, "K": 2}


@dataclass(frozen=True)
class RuleFinding:
    timestamp: np.datetime64
    type_code: str
    reason: str

    def __post_init__(self):
        if self.type_code not in _PRECEDENCE:
            raise ConfigError(f"rule findings are F, G or K, not {self.type_code!r}")


def detect_missing_gap(frame: SeriesFrame, max_gap_minutes: float) -> list[RuleFinding]:
    if max_gap_minutes <= 0:
        raise ConfigError("max_gap_minutes must be positive")
    if len(frame) < 2:
        return []
    require_valid(frame)
    gaps = np.diff(frame.timestamps).astype("timedelta64[s]").astype(np.int64) / 60.0
    return [
        RuleFinding(frame.timestamps[i + 1], "K", f"{gaps[i]:g} min since previous observation")
        for i in np.flatnonzero(gaps > max_gap_minutes)
    ]


def detect_impossible(frame: SeriesFrame, spec: SensorSpec) -> list[RuleFinding]:
    v = frame.values
    bad = v < 0
    if spec.zero_is_impossible:
        bad |= v == 0
    return [
        RuleFinding(frame.timestamps[i], "F", "negative value" if v[i] < 0 else "zero value")
        for i in np.flatnonzero(bad)
    ]


def detect_out_of_range(frame: SeriesFrame, spec: SensorSpec) -> list[RuleFinding]:
    v = frame.values
    impossible = (v < 0) | ((v == 0) & spec.zero_is_impossible)
    outside = ((v < spec.min_detectable) | (v > spec.max_detectable)) & ~impossible
    return [
        RuleFinding(
            frame.timestamps[i],
            "G",
            f"{v[i]:g} outside [{spec.min_detectable:g}, {spec.max_detectable:g}]",
        )
        for i in np.flatnonzero(outside)
    ]


def run_rules(frame: SeriesFrame, spec: SensorSpec, config: DetectorConfig | None = None) -> list[RuleFinding]:
    """All rule findings for ``frame``, one per timestamp, in time order."""
    config = config or DetectorConfig()
    best: dict = {}
    for finding in (
        detect_impossible(frame, spec)
        + detect_out_of_range(frame, spec)
        + detect_missing_gap(frame, config.max_gap_minutes)
    ):
        key = finding.timestamp.tolist()
        current = best.get(key)
        if current is None or _PRECEDENCE[finding.type_code] < _PRECEDENCE[current.type_code]:
            best[key] = finding
    return [best[k] for k in sorted(best)]
