"""Feature-space outlier detection over several transformed series.

Includes the derivative transforms, min-max normalisation, Leader
clustering, an exponential-tail extreme-value threshold, HDoutliers, and
kNN-agg / kNN-sum scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    ConfigError,
    DegenerateSeriesError,
    DetectorConfig,
    InsufficientDataError,
    TransformError,
    as_float_array,
)

METHODS = ("HDoutliers", "kNN-agg", "kNN-sum")


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    columns: tuple
    timestamps: np.ndarray
    dropped: tuple = ()

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, ndmin=2)
        if vals.shape[1] != len(self.columns):
            raise ConfigError("one column name per feature column is required")
        if len(self.timestamps) != vals.shape[0]:
            raise ConfigError("one timestamp per feature row is required")
        if not np.all(np.isfinite(vals)):
            raise ConfigError("feature matrix must be finite; build it with from_columns")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype="datetime64[s]"))

    @classmethod
    def from_columns(cls, timestamps, columns: dict) -> "FeatureMatrix":
        """Stack aligned columns, dropping (and recording) rows with non-finite entries."""
        ts = np.asarray(timestamps, dtype="datetime64[s]")
        names = tuple(columns)
        vals = np.column_stack([as_float_array(columns[c]) for c in names])
        ok = np.all(np.isfinite(vals), axis=1)
        return cls(vals[ok], names, ts[ok], tuple(ts[~ok]))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class ExemplarSet:
    exemplars: np.ndarray   # row index of each exemplar
    membership: np.ndarray  # exemplar number for every row
    radius: float


@dataclass(frozen=True)
class OutlierScoreSet:
    scores: np.ndarray
    method: str
    threshold: float = math.inf
    flagged: np.ndarray = field(default=None)
    timestamps: np.ndarray | None = None
    transform: str = ""

    def __post_init__(self):
        if self.flagged is None:
            object.__setattr__(self, "flagged", self.scores > self.threshold)


# -- transforms -------------------------------------------------------------------

def transform_log(series) -> np.ndarray:
    x = as_float_array(series)
    if np.any(x <= 0):
        raise TransformError("log transform needs strictly positive values; sanitize first")
    return np.log(x)


def transform_derivative(series, scheme: str = "backward") -> np.ndarray:
    """Discrete derivative keeping one value per input point.

    ``"backward"`` gives ``x[t] - x[t-1]`` (first point uses the forward
    difference), so an isolated spike shows up on its own row.
    ``"central"`` gives ``(x[t+1] - x[t-1]) / 2`` inside the series with
    one-step differences at both ends.
    """
    x = as_float_array(series)
    if len(x) < 3:
        raise InsufficientDataError("derivative needs at least 3 points")
    out = np.empty_like(x)
    if scheme == "backward":
        out[1:] = np.diff(x)
        out[0] = out[1]
    elif scheme == "central":
        out[1:-1] = (x[2:] - x[:-2]) / 2.0
        out[0] = x[1] - x[0]
        out[-1] = x[-1] - x[-2]
    else:
        raise ConfigError(f"unknown derivative scheme {scheme!r}")
    return out


def transform_one_sided(derivative, direction: str) -> np.ndarray:
    x = as_float_array(derivative)
    if direction == "negative":
        return np.where(x < 0, x, 0.0)
    if direction == "positive":
        return np.where(x > 0, x, 0.0)
    raise ConfigError("direction must be 'positive' or 'negative'")


def normalize_columns(matrix: FeatureMatrix) -> FeatureMatrix:
    """Min-max scale every column onto [0, 1]."""
    v = matrix.values
    lo, hi = v.min(axis=0), v.max(axis=0)
    flat = [c for c, span in zip(matrix.columns, hi - lo) if span == 0]
    if flat:
        raise DegenerateSeriesError(f"constant feature column(s): {', '.join(flat)}")
    return FeatureMatrix((v - lo) / (hi - lo), matrix.columns, matrix.timestamps, matrix.dropped)


def _rows(matrix) -> np.ndarray:
    if isinstance(matrix, FeatureMatrix):
        return matrix.values
    X = np.asarray(matrix, dtype=float)
    return X[:, None] if X.ndim == 1 else X


# -- neighbours -------------------------------------------------------------------

def euclidean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((a - b) ** 2, axis=-1))


def knn_distances(matrix, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Distances and indices of each row's k nearest other rows, ascending.

    A kd-tree proposes candidates; the returned distances are recomputed
    with :func:`euclidean` so they do not depend on the tree's arithmetic.
    """
    X = _rows(matrix)
    n = len(X)
    if k < 1:
        raise ConfigError("k must be positive")
    if n <= k:
        raise InsufficientDataError(f"need more than k={k} points, got {n}")
    m = min(n, k + 1 + 2)
    tree = cKDTree(X)
    _, cand = tree.query(X, k=m)
    cand = cand.reshape(n, m)
    dist = np.empty((n, k))
    idx = np.empty((n, k), dtype=int)
    for i in range(n):
        others = cand[i][cand[i] != i]
        if len(others) == m:
            # self fell outside the candidate list (many exact duplicates)
            others = others[:-1]
        d = euclidean(X[others], X[i])
        order = np.lexsort((others, d))[:k]
        dist[i] = d[order]
        idx[i] = others[order]
    return dist, idx


def leader_cluster(matrix, radius: float) -> ExemplarSet:
    """Single pass in row order; a row joins its nearest exemplar within
    ``radius`` or else becomes a new exemplar."""
    if not radius > 0:
        raise ConfigError("radius must be positive")
    X = _rows(matrix)
    n = len(X)
    centres = np.empty_like(X)
    exemplars = []
    membership = np.empty(n, dtype=int)
    for i in range(n):
        if exemplars:
            d = euclidean(centres[:len(exemplars)], X[i])
            j = int(np.argmin(d))
            if d[j] <= radius:
                membership[i] = j
                continue
        centres[len(exemplars)] = X[i]
        membership[i] = len(exemplars)
        exemplars.append(i)
    return ExemplarSet(np.array(exemplars, dtype=int), membership, float(radius))


# -- thresholds and detectors --------------------------------------------------

def evt_threshold(nn_distances, evt_alpha: float = 0.05) -> float:
    """Median plus the (1 - evt_alpha) quantile of an exponential fitted to
    the excesses of the upper half of the positive distances."""
    x = as_float_array(nn_distances)
    if len(x) < 10:
        raise InsufficientDataError("extreme-value threshold needs at least 10 distances")
    if not 0 < evt_alpha < 1:
        raise ConfigError("evt_alpha must lie in (0, 1)")
    pos = np.sort(x[x > 0])
    if len(pos) < 2:
        return math.inf
    med = float(np.median(pos))
    mean_excess = float(np.mean(pos[len(pos) // 2:] - med))
    if mean_excess <= 0:
        return math.inf
    return med + mean_excess * math.log(1.0 / evt_alpha)


def leader_radius(n: int, dim: int) -> float:
    return 0.1 / math.log(n) ** (1.0 / dim)


def hdoutliers_detect(matrix, config: DetectorConfig | None = None, radius: float | None = None) -> OutlierScoreSet:
    """Exemplar-based outliers: Leader clustering, nearest-exemplar distances,
    extreme-value threshold; every member of a flagged exemplar is flagged."""
    config = config or DetectorConfig()
    X = _rows(matrix)
    n, dim = X.shape
    if n < 3:
        raise InsufficientDataError("HDoutliers needs at least 3 rows")
    r = radius if radius is not None else leader_radius(n, dim)
    ex = leader_cluster(X, r)
    if len(ex.exemplars) < 2:
        raise InsufficientDataError("all rows fall in a single exemplar")
    nn, _ = knn_distances(X[ex.exemplars], 1)
    ex_score = nn[:, 0]
    thr = evt_threshold(ex_score, config.evt_alpha)
    scores = ex_score[ex.membership]
    return OutlierScoreSet(scores, "HDoutliers", thr, scores > thr, _timestamps(matrix))


def knn_scores(matrix, k: int = 10, variant: str = "agg") -> OutlierScoreSet:
    dist, _ = knn_distances(matrix, k)
    if variant == "sum":
        scores, method = dist.sum(axis=1), "kNN-sum"
    elif variant == "agg":
        w = np.arange(k, 0, -1, dtype=float)
        scores, method = dist @ (w / w.sum()), "kNN-agg"
    else:
        raise ConfigError("variant must be 'agg' or 'sum'")
    return OutlierScoreSet(scores, method, math.inf, np.zeros(len(scores), bool), _timestamps(matrix))


def knn_detect(matrix, k: int | None = None, variant: str = "agg", config: DetectorConfig | None = None) -> OutlierScoreSet:
    config = config or DetectorConfig()
    raw = knn_scores(matrix, k or config.k_neighbours, variant)
    thr = evt_threshold(raw.scores, config.evt_alpha)
    return OutlierScoreSet(raw.scores, raw.method, thr, raw.scores > thr, raw.timestamps)


def _timestamps(matrix):
    return matrix.timestamps if isinstance(matrix, FeatureMatrix) else None


def detect(matrix: FeatureMatrix, method: str, config: DetectorConfig | None = None) -> OutlierScoreSet:
    if method == "HDoutliers":
        return hdoutliers_detect(matrix, config)
    if method == "kNN-agg":
        return knn_detect(matrix, None, "agg", config)
    if method == "kNN-sum":
        return knn_detect(matrix, None, "sum", config)
    raise ConfigError(f"unknown feature method {method!r}")
