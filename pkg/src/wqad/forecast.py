"""Regression-family one-step forecasters: naive, linear AR, ARIMA and
regression with ARIMA errors.

ARIMA coefficients are estimated by conditional sum of squares (CSS) with a
Nelder-Mead search.  All series passed to the ``fit_*`` functions are
already on the modelling scale (log or differenced log); ``transform`` only
records which scale that was so detection can reproduce it.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from math import comb

import numpy as np
from scipy import optimize, signal, stats

from .core import (
    ConfigError,
    DataError,
    DegenerateSeriesError,
    InsufficientDataError,
    InvalidDofError,
    NumericError,
    as_float_array,
)

MODEL_KINDS = ("Naive", "LinearAR", "ARIMA", "RegARIMA")
TRANSFORMS = ("log", "diff-log", "identity")
MODEL_SCHEMA = "wqad.forecast-model"
MODEL_SCHEMA_VERSION = 1
DEFAULT_S_FLOOR = 1e-8


class NoModelError(NumericError):
    pass


class CollinearityError(DataError):
    pass


class MissingCovariateError(DataError):
    pass


class RejectedFitError(NumericError):
    """CSS optimum is explosive or non-invertible even after a restart."""


@dataclass(frozen=True)
class ForecastModel:
    kind: str
    p: int
    d: int
    q: int
    c: float
    phi: tuple
    theta: tuple
    s: float
    T: int
    k_params: int
    beta: tuple = ()
    training_transform: str = "log"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.training_transform not in TRANSFORMS:
            raise ConfigError(f"unknown transform {self.training_transform!r}")
        object.__setattr__(self, "phi", tuple(float(v) for v in self.phi))
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        object.__setattr__(self, "beta", tuple(float(v) for v in self.beta))
        if len(self.phi) != self.p or len(self.theta) != self.q:
            raise ConfigError("coefficient counts do not match the model order")
        if not self.s > 0 or self.k_params < 1:
            raise ConfigError("model needs s > 0 and k_params >= 1")

    @property
    def order(self) -> tuple:
        return (self.p, self.d, self.q)

    @property
    def warmup(self) -> int:
        return self.p + self.d

    def to_dict(self) -> dict:
        out = asdict(self)
        out["phi"] = list(self.phi)
        out["theta"] = list(self.theta)
        out["beta"] = list(self.beta)
        return {"schema": MODEL_SCHEMA, "version": MODEL_SCHEMA_VERSION, **out}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "ForecastModel":
        if doc.get("schema") != MODEL_SCHEMA:
            raise ConfigError("not a forecast-model document")
        if doc.get("version") != MODEL_SCHEMA_VERSION:
            raise ConfigError(f"unsupported model document version {doc.get('version')!r}")
        fields = {k: v for k, v in doc.items() if k not in ("schema", "version")}
        return cls(**fields)

    @classmethod
    def from_json(cls, text: str) -> "ForecastModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class FitDiagnostics:
    aic: float
    rss: float
    ljung_box_Q: float
    ljung_box_pvalue: float
    pacf: tuple = field(default_factory=tuple)
    residuals: np.ndarray | None = field(default=None, repr=False, compare=False)


# -- autocorrelation tools ---------------------------------------------------

def _acf(x: np.ndarray, nlags: int) -> np.ndarray:
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom == 0.0 or not np.isfinite(denom):
        raise DegenerateSeriesError("series has zero variance")
    return np.array([1.0] + [float(np.dot(x[k:], x[:-k])) / denom for k in range(1, nlags + 1)])


def pacf(train, max_lag: int) -> np.ndarray:
    """Partial autocorrelations at lags ``1..max_lag`` (Durbin-Levinson)."""
    x = as_float_array(train)
    if max_lag < 1:
        raise ConfigError("max_lag must be at least 1")
    if len(x) <= max_lag + 1:
        raise InsufficientDataError(f"need more than {max_lag + 1} points for PACF to lag {max_lag}")
    r = _acf(x, max_lag)
    out = np.empty(max_lag)
    phi = np.empty(0)
    for k in range(1, max_lag + 1):
        if k == 1:
            a = r[1]
        else:
            num = r[k] - np.dot(phi, r[k - 1:0:-1])
            den = 1.0 - np.dot(phi, r[1:k])
            a = num / den
        phi = np.append(phi - a * phi[::-1], a)
        out[k - 1] = a
    return out


def select_ar_order(train, p_max: int, significance_z: float = 1.96) -> int:
    """Largest lag whose PACF leaves the +/- z/sqrt(n) band, or 1 if none does."""
    if p_max < 1:
        raise ConfigError("p_max must be at least 1")
    x = as_float_array(train)
    band = significance_z / math.sqrt(len(x))
    significant = np.flatnonzero(np.abs(pacf(x, p_max)) > band)
    return int(significant[-1] + 1) if significant.size else 1


def ljung_box(residuals, h: int, fitted_params: int = 0) -> tuple[float, float]:
    """Ljung-Box portmanteau statistic and its chi-square p-value."""
    e = as_float_array(residuals)
    n = len(e)
    if not h > fitted_params or fitted_params < 0:
        raise InvalidDofError(f"h={h} must exceed the {fitted_params} fitted parameters")
    if not n > h:
        raise InvalidDofError(f"need more than h={h} residuals, got {n}")
    r = _acf(e, h)[1:]
    lags = np.arange(1, h + 1)
    Q = float(n * (n + 2) * np.sum(r**2 / (n - lags)))
    return Q, float(stats.chi2.sf(Q, h - fitted_params))


# -- naive and linear AR -----------------------------------------------------

def _rms(e: np.ndarray, s_floor: float) -> float:
    return max(math.sqrt(float(np.mean(e**2))), s_floor) if len(e) else s_floor


def fit_naive(train, s_floor: float = DEFAULT_S_FLOOR, transform: str = "log") -> ForecastModel:
    x = as_float_array(train)
    if len(x) < 2:
        raise InsufficientDataError("naive model needs at least 2 training points")
    return ForecastModel(
        "Naive", 0, 1, 0, 0.0, (), (), _rms(np.diff(x), s_floor), len(x), 1,
        training_transform=transform,
    )


def forecast_naive(model: ForecastModel, last_observed: float) -> float:
    if model.kind != "Naive":
        raise ConfigError("forecast_naive requires a Naive model")
    return float(last_observed)


def _lag_matrix(x: np.ndarray, p: int) -> np.ndarray:
    n = len(x)
    return np.column_stack([x[p - i:n - i] for i in range(1, p + 1)]) if p else np.empty((n - p, 0))


def fit_linear_ar(train, p: int, s_floor: float = DEFAULT_S_FLOOR, transform: str = "diff-log") -> ForecastModel:
    """Least-squares AR(p) with a constant.

    The forecast is ``c + sum(phi[i-1] * x[t+1-i] for i in 1..p)``.
    """
    x = as_float_array(train)
    if p < 0:
        raise ConfigError("p must be non-negative")
    if len(x) <= p + 1:
        raise InsufficientDataError(f"AR({p}) needs more than {p + 1} points")
    if np.ptp(x) == 0:
        raise DegenerateSeriesError("constant series: AR design is singular")
    X = np.column_stack([np.ones(len(x) - p), _lag_matrix(x, p)])
    y = x[p:]
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise DegenerateSeriesError("AR design matrix is singular")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return ForecastModel(
        "LinearAR", p, 0, 0, float(coef[0]), tuple(coef[1:]), (), _rms(resid, s_floor),
        len(x), p + 1, training_transform=transform,
    )


# -- ARIMA via conditional sum of squares -------------------------------------

def difference(x: np.ndarray, d: int) -> np.ndarray:
    for _ in range(d):
        x = np.diff(x)
    return x


def _roots_outside_unit_circle(poly_tail: np.ndarray, sign: float) -> bool:
    # polynomial 1 + sign*(a1 z + a2 z^2 + ...)
    if not len(poly_tail) or not np.any(poly_tail):
        return True
    coeffs = np.r_[1.0, sign * poly_tail]
    roots = np.roots(coeffs[::-1])
    return bool(np.all(np.abs(roots) > 1.0))


def is_stationary(phi) -> bool:
    return _roots_outside_unit_circle(np.asarray(phi, dtype=float), -1.0)


def is_invertible(theta) -> bool:
    return _roots_outside_unit_circle(np.asarray(theta, dtype=float), 1.0)


def css_residuals(w: np.ndarray, c: float, phi, theta) -> np.ndarray:
    """One-step innovations of an ARMA(p, q) on ``w``, conditional on the first
    p values and zero pre-sample innovations."""
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    p = len(phi)
    u = w[p:] - c
    if p:
        u = u - _lag_matrix(w, p) @ phi
    if len(theta):
        u = signal.lfilter([1.0], np.r_[1.0, theta], u)
    return u


def _css_fit(w, p, q, include_constant, start):
    n_par = int(include_constant) + p + q

    def unpack(v):
        mu = v[0] if include_constant else 0.0
        phi = v[int(include_constant):int(include_constant) + p]
        theta = v[int(include_constant) + p:]
        return mu * (1.0 - phi.sum()), phi, theta

    def rss(v):
        c, phi, theta = unpack(v)
        if not (is_stationary(phi) and is_invertible(theta)):
            return np.inf
        e = css_residuals(w, c, phi, theta)
        val = float(np.dot(e, e)) / len(e)
        return val if np.isfinite(val) else np.inf

    if n_par == 0:
        c, phi, theta = unpack(np.empty(0))
        return c, phi, theta, rss(np.empty(0))

    scale = np.ones(n_par) * 0.1
    if include_constant:
        scale[0] = max(0.1 * float(np.std(w)), 1e-3)
    x0 = np.asarray(start, dtype=float)
    best_x, best_f = x0, rss(x0)
    for _ in range(4):
        simplex = np.vstack([best_x, best_x + np.diag(scale)])
        res = optimize.minimize(
            rss, best_x, method="Nelder-Mead",
            options={
                "initial_simplex": simplex, "xatol": 1e-9, "fatol": 1e-14,
                "maxiter": 1500 * n_par, "maxfev": 1500 * n_par, "adaptive": n_par > 2,
            },
        )
        improved = res.fun < best_f * (1 - 1e-12)
        if res.fun <= best_f:
            best_x, best_f = res.x, res.fun
        if not improved:
            break
        scale = scale * 0.1
    c, phi, theta = unpack(best_x)
    return c, phi, theta, best_f * (len(w) - p)


def _aic(rss: float, n_eff: int, k: int, s_floor: float) -> float:
    return n_eff * math.log(max(rss / n_eff, s_floor**2)) + 2 * k


def _diagnostics(resid: np.ndarray, rss: float, aic: float, fitted: int) -> FitDiagnostics:
    h = max(10, fitted + 3)
    try:
        Q, pval = ljung_box(resid, min(h, len(resid) - 1), fitted)
    except (DegenerateSeriesError, InvalidDofError):
        Q, pval = 0.0, 1.0
    try:
        pac = tuple(pacf(resid, min(20, len(resid) // 2 - 1)))
    except (DegenerateSeriesError, InsufficientDataError, ConfigError):
        pac = ()
    return FitDiagnostics(aic, rss, Q, pval, pac, resid)


def fit_arima(
    train,
    p: int,
    d: int,
    q: int,
    s_floor: float = DEFAULT_S_FLOOR,
    transform: str = "log",
    include_constant: bool | None = None,
) -> tuple[ForecastModel, FitDiagnostics]:
    """Fit ARIMA(p, d, q) by conditional sum of squares.

    A constant is estimated only when ``d == 0`` unless ``include_constant``
    says otherwise, so ARIMA(0, 1, 0) is exactly the naive model.
    ``k_params`` counts the AR and MA terms, the constant if any, and the
    innovation variance.
    """
    x = as_float_array(train)
    if min(p, d, q) < 0:
        raise ConfigError("orders must be non-negative")
    if len(x) <= p + d + q + 10:
        raise InsufficientDataError(f"ARIMA{(p, d, q)} needs more than {p + d + q + 10} points")
    if include_constant is None:
        include_constant = d == 0
    w = difference(x, d)
    if p + q and np.ptp(w) == 0:
        raise DegenerateSeriesError("differenced series is constant")

    zero = np.zeros(int(include_constant) + p + q)
    if include_constant:
        zero[0] = float(np.mean(w))
    c, phi, theta, rss = _css_fit(w, p, q, include_constant, zero)
    if not (np.isfinite(rss) and is_stationary(phi) and is_invertible(theta)):
        nudged = zero.copy()
        nudged[int(include_constant):] = 0.1 * (-1.0) ** np.arange(p + q)
        c, phi, theta, rss = _css_fit(w, p, q, include_constant, nudged)
        if not (np.isfinite(rss) and is_stationary(phi) and is_invertible(theta)):
            raise RejectedFitError(f"ARIMA{(p, d, q)} optimum is explosive or non-invertible")

    resid = css_residuals(w, c, phi, theta)
    rss = float(np.dot(resid, resid))
    k = p + q + 1 + int(include_constant)
    kind = "Naive" if (p, d, q) == (0, 1, 0) and not include_constant else "ARIMA"
    model = ForecastModel(
        kind, p, d, q, float(c), tuple(phi), tuple(theta), _rms(resid, s_floor), len(x), k,
        training_transform=transform,
    )
    return model, _diagnostics(resid, rss, _aic(rss, len(resid), k, s_floor), p + q)


def auto_arima(
    train,
    p_max: int = 5,
    d_max: int = 2,
    q_max: int = 5,
    s_floor: float = DEFAULT_S_FLOOR,
    transform: str = "log",
    include_constant: bool | None = None,
) -> tuple[ForecastModel, FitDiagnostics]:
    """Exhaustive AIC search over the (p, d, q) grid.

    Ties go to the smaller p + q, then the smaller d.
    """
    x = as_float_array(train)
    best = None
    for p, d, q in itertools.product(range(p_max + 1), range(d_max + 1), range(q_max + 1)):
        if len(x) <= p + d + q + 10:
            continue
        try:
            model, diag = fit_arima(x, p, d, q, s_floor, transform, include_constant)
        except (RejectedFitError, DegenerateSeriesError):
            continue
        if not np.isfinite(diag.aic):
            continue
        key = (round(diag.aic, 8), p + q, d, p)
        if best is None or key < best[0]:
            best = (key, model, diag)
    if best is None:
        raise NoModelError("every ARIMA candidate was rejected")
    model, diag = best[1], best[2]
    if model.kind == "Naive":
        model = _replace(model, kind="ARIMA")
    return model, diag


def _replace(model: ForecastModel, **changes) -> ForecastModel:
    fields = {k: getattr(model, k) for k in model.__dataclass_fields__}
    fields.update(changes)
    return ForecastModel(**fields)


# -- regression with ARIMA errors -----------------------------------------------

def _as_matrix(Z, n) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[0] != n:
        raise DataError("covariate rows must align with the response")
    if not np.all(np.isfinite(Z)):
        raise DataError("covariates contain missing values")
    return Z


def _ols(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    if X.shape[1] and np.linalg.matrix_rank(X) < X.shape[1]:
        raise CollinearityError("covariates are collinear")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef


def fit_regarima(
    train_y,
    train_Z,
    p_max: int = 5,
    d_max: int = 2,
    q_max: int = 5,
    s_floor: float = DEFAULT_S_FLOOR,
    transform: str = "log",
) -> tuple[ForecastModel, FitDiagnostics]:
    """Staged fit of ``y = b0 + Z b + eta`` with ARIMA errors ``eta``.

    OLS first, then an AIC search on the OLS residuals, then one generalized
    least-squares refit of the slopes through the selected ARMA filter.
    Columns of ``Z`` that are identically zero get a zero coefficient.
    """
    y = as_float_array(train_y)
    Z = _as_matrix(train_Z, len(y))
    active = np.flatnonzero(np.any(Z != 0, axis=0))
    X = np.column_stack([np.ones(len(y)), Z[:, active]])
    coef = _ols(X, y)

    eta = y - X @ coef
    stage2, _ = auto_arima(eta, p_max, d_max, q_max, s_floor, transform, include_constant=False)
    p, d, q = stage2.order

    def arma_filter(v):
        return signal.lfilter(np.r_[1.0, -np.asarray(stage2.phi)], np.r_[1.0, stage2.theta], difference(v, d))[p:]

    fy = arma_filter(y)
    fX = np.column_stack([arma_filter(X[:, j]) for j in range(X.shape[1])])
    if d == 0:
        coef = _ols(fX, fy)
    elif len(active):
        slopes = _ols(fX[:, 1:], fy - coef[0] * fX[:, 0])
        coef = np.r_[coef[0], slopes]

    beta = np.zeros(1 + Z.shape[1])
    beta[0] = coef[0]
    beta[1 + active] = coef[1:]
    eta = y - beta[0] - Z @ beta[1:]
    arima, diag = fit_arima(eta, p, d, q, s_floor, transform, include_constant=False)
    k = arima.k_params + len(beta)
    rss = diag.rss
    n_eff = len(diag.residuals)
    model = ForecastModel(
        "RegARIMA", p, d, q, 0.0, arima.phi, arima.theta, arima.s, len(y), k,
        beta=tuple(beta), training_transform=transform,
    )
    return model, _diagnostics(diag.residuals, rss, _aic(rss, n_eff, k, s_floor), p + q)


# -- one-step forecasting --------------------------------------------------------

class ForecastState:
    """Running one-step forecaster for a fitted model.

    Holds the (regression-adjusted) history and the innovation estimates used
    by MA terms; pre-sample innovations are zero.  Call :meth:`forecast` then
    :meth:`update` with whichever value should enter the history.
    """

    def __init__(self, model: ForecastModel):
        self.model = model
        self._eta: list[float] = []
        self._w: list[float] = []
        self._e: list[float] = []
        self._pending: float | None = None
        self._diff_weights = [(-1.0) ** j * comb(model.d, j) for j in range(model.d + 1)]

    def ready(self) -> bool:
        return len(self._eta) >= self.model.p + self.model.d

    def _regression(self, z) -> float:
        m = self.model
        if m.kind != "RegARIMA":
            return 0.0
        if z is None:
            raise MissingCovariateError("RegARIMA forecast needs the covariate row")
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if len(z) != len(m.beta) - 1:
            raise MissingCovariateError("covariate row has the wrong length")
        return m.beta[0] + float(np.dot(m.beta[1:], z))

    def forecast(self, z=None) -> float:
        m = self.model
        if not self.ready():
            raise InsufficientDataError(f"need {m.p + m.d} history values before forecasting")
        w_hat = m.c
        for i, ph in enumerate(m.phi, start=1):
            w_hat += ph * self._w[-i]
        for j, th in enumerate(m.theta, start=1):
            if j <= len(self._e):
                w_hat += th * self._e[-j]
        eta_hat = w_hat - sum(self._diff_weights[j] * self._eta[-j] for j in range(1, m.d + 1))
        self._pending = eta_hat
        return eta_hat + self._regression(z)

    def update(self, value: float, z=None) -> None:
        m = self.model
        eta = float(value) - self._regression(z)
        if self._pending is not None:
            innovation = eta - self._pending
        else:
            innovation = 0.0
        self._pending = None
        self._eta.append(eta)
        if len(self._eta) > m.d:
            tail = self._eta[-(m.d + 1):]
            self._w.append(sum(wt * tail[-1 - j] for j, wt in enumerate(self._diff_weights)))
            self._e.append(innovation)


def forecast_one_step(model: ForecastModel, history, Z_next=None, Z_history=None) -> float:
    """Mean one-step forecast after ``history`` (on the model's scale)."""
    x = as_float_array(history)
    if len(x) < model.p + model.d:
        raise InsufficientDataError(f"history must hold at least {model.p + model.d} values")
    if model.kind == "RegARIMA":
        if Z_next is None or Z_history is None:
            raise MissingCovariateError("RegARIMA forecasts need covariate history and Z_next")
        Zh = _as_matrix(Z_history, len(x))
    state = ForecastState(model)
    for i, v in enumerate(x):
        if state.ready():
            state.forecast(Zh[i] if model.kind == "RegARIMA" else None)
        state.update(v, Zh[i] if model.kind == "RegARIMA" else None)
    return state.forecast(Z_next)
