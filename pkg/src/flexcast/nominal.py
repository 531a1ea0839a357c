"""
Kernel ridge regression of the request-free building state on weather.

Features at step t are the last ``n_lags`` outdoor temperatures and
irradiances plus a sin/cos time-of-day encoding, z-scored with statistics
stored alongside the model. The kernel is a squared exponential with one
lengthscale per feature dimension.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

log = logging.getLogger(__name__)

DEFAULT_LAGS = 12
MAX_TRAINING_POINTS = 2000


class NominalFitError(RuntimeError):
    """Kernel system could not be factorized."""


@dataclass(frozen=True, eq=False)
class FeatureScaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_data(cls, X: np.ndarray) -> "FeatureScaler":
        mean = np.nanmean(X, axis=0)
        std = np.nanstd(X, axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean, std)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std


def feature_dimension(n_lags: int, time_encoding: bool = True) -> int:
    return 2 * n_lags + (2 if time_encoding else 0)


def weather_features(weather, n_lags: int = DEFAULT_LAGS, time_encoding: bool = True) -> np.ndarray:
    """Raw (unscaled) feature rows for every step of a weather-like object.

    ``weather`` needs ``timestamps``, ``outdoor_temp`` and ``irradiance``.
    Rows for steps ``t < n_lags - 1`` have no complete lag window and are NaN.
    """
    if n_lags < 1:
        raise ValueError("n_lags must be >= 1")
    t_out = np.asarray(weather.outdoor_temp, dtype=float)
    irr = np.asarray(weather.irradiance, dtype=float)
    n = len(t_out)
    m = feature_dimension(n_lags, time_encoding)
    X = np.full((n, m), np.nan)
    if n >= n_lags:
        # Column i holds lag n_lags - 1 - i, so the last lag column is the current step.
        windows_t = np.lib.stride_tricks.sliding_window_view(t_out, n_lags)
        windows_i = np.lib.stride_tricks.sliding_window_view(irr, n_lags)
        X[n_lags - 1 :, :n_lags] = windows_t
        X[n_lags - 1 :, n_lags : 2 * n_lags] = windows_i
    if time_encoding:
        ts = np.asarray(weather.timestamps, dtype="datetime64[m]")
        minutes = (ts - ts.astype("datetime64[D]")).astype(float)
        phase = 2.0 * np.pi * minutes / 1440.0
        X[n_lags - 1 :, -2] = np.sin(phase[n_lags - 1 :])
        X[n_lags - 1 :, -1] = np.cos(phase[n_lags - 1 :])
    return X


@dataclass(frozen=True, eq=False)
class Samples:
    """Scaled feature rows ``X``, state targets ``y`` and the trace steps they came from."""

    X: np.ndarray
    y: np.ndarray
    steps: np.ndarray
    scaler: FeatureScaler
    n_lags: int

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "Samples":
        return Samples(self.X[idx], self.y[idx], self.steps[idx], self.scaler, self.n_lags)


def build_features(
    trace,
    n_lags: int = DEFAULT_LAGS,
    scaler: FeatureScaler | None = None,
    require_request_free: bool = True,
) -> Samples:
    """Pair each step ``t >= n_lags - 1`` of ``trace`` with its state.

    Args:
        trace: A :class:`flexcast.sim.Trace` (anything with weather columns,
            ``state`` and ``request``).
        n_lags: Number of current-and-past steps per weather variable.
        scaler: Reuse existing feature statistics; fitted on this trace if None.
        require_request_free: Reject traces that contain requests.
    """
    if len(trace) < n_lags:
        raise ValueError(f"trace of length {len(trace)} is shorter than n_lags={n_lags}")
    if require_request_free and np.any(np.asarray(trace.request) != 0):
        raise ValueError("nominal training data must be request-free")
    raw = weather_features(trace, n_lags)[n_lags - 1 :]
    if scaler is None:
        scaler = FeatureScaler.from_data(raw)
    steps = np.arange(n_lags - 1, len(trace))
    y = np.asarray(trace.state, dtype=float)[n_lags - 1 :]
    return Samples(scaler.transform(raw), y, steps, scaler, n_lags)


def se_kernel(A: np.ndarray, B: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """``exp(-0.5 * sum_d ((a_d - b_d) / l_d)**2)`` for all row pairs."""
    A = np.atleast_2d(A) / lengthscales
    B = np.atleast_2d(B) / lengthscales
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-0.5 * np.maximum(sq, 0.0))


@dataclass(frozen=True, eq=False)
class NominalModel:
    """Fitted regressor; immutable and safe to share."""

    inputs: np.ndarray
    weights: np.ndarray
    lengthscales: np.ndarray
    ridge: float
    target_mean: float
    target_std: float
    scaler: FeatureScaler | None = None
    n_lags: int | None = None

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def predict_many(self, E: np.ndarray) -> np.ndarray:
        """Predictions for scaled feature rows; NaN rows map to NaN."""
        E = np.atleast_2d(np.asarray(E, dtype=float))
        if E.shape[1] != self.dim:
            raise ValueError(f"feature length {E.shape[1]} does not match model dimension {self.dim}")
        out = np.full(len(E), np.nan)
        ok = np.all(np.isfinite(E), axis=1)
        if ok.any():
            out[ok] = se_kernel(E[ok], self.inputs, self.lengthscales) @ self.weights
            out[ok] = out[ok] * self.target_std + self.target_mean
        return out

    def gradient(self, e: np.ndarray) -> np.ndarray:
        """Analytic gradient of the prediction with respect to scaled features."""
        e = np.asarray(e, dtype=float)
        k = se_kernel(e, self.inputs, self.lengthscales)[0]
        diff = (self.inputs - e) / self.lengthscales**2
        return self.target_std * (k * self.weights) @ diff

    def predict_weather(self, weather) -> np.ndarray:
        """Nominal state at every step of a weather-like object (NaN during lag warm-up)."""
        if self.scaler is None or self.n_lags is None:
            raise ValueError("model has no feature pipeline attached")
        raw = weather_features(weather, self.n_lags)
        return self.predict_many(self.scaler.transform(raw))

    def to_dict(self) -> dict:
        return {
            "inputs": self.inputs.tolist(),
            "weights": self.weights.tolist(),
            "lengthscales": self.lengthscales.tolist(),
            "ridge": self.ridge,
            "target_mean": self.target_mean,
            "target_std": self.target_std,
            "feature_mean": None if self.scaler is None else self.scaler.mean.tolist(),
            "feature_std": None if self.scaler is None else self.scaler.std.tolist(),
            "n_lags": self.n_lags,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NominalModel":
        scaler = None
        if d.get("feature_mean") is not None:
            scaler = FeatureScaler(np.array(d["feature_mean"], dtype=float), np.array(d["feature_std"], dtype=float))
        return cls(
            inputs=np.array(d["inputs"], dtype=float),
            weights=np.array(d["weights"], dtype=float),
            lengthscales=np.array(d["lengthscales"], dtype=float),
            ridge=float(d["ridge"]),
            target_mean=float(d["target_mean"]),
            target_std=float(d["target_std"]),
            scaler=scaler,
            n_lags=d.get("n_lags"),
        )


def fit(X, y, lengthscales, ridge: float, scaler: FeatureScaler | None = None, n_lags: int | None = None) -> NominalModel:
    """Solve ``(K + ridge * I) w = (y - mean) / std`` by Cholesky factorization.

    ``lengthscales`` may be a scalar (isotropic) or one value per column of ``X``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(X) != len(y):
        raise ValueError("X and y lengths differ")
    if len(y) < 2:
        raise ValueError("need at least two samples")
    ls = np.broadcast_to(np.asarray(lengthscales, dtype=float), (X.shape[1],)).copy()
    if np.any(ls <= 0) or not ridge > 0:
        raise ValueError("lengthscales and ridge must be positive")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite features")

    y_mean = float(y.mean())
    y_std = float(y.std())
    if y_std < 1e-12:
        y_std = 1.0
    target = (y - y_mean) / y_std
    K = se_kernel(X, X, ls)
    K[np.diag_indices_from(K)] += ridge
    try:
        factor = linalg.cho_factor(K, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NominalFitError(
            f"kernel matrix not positive definite (ridge={ridge:g}); increase ridge or drop duplicate inputs"
        ) from exc
    weights = linalg.cho_solve(factor, target, check_finite=False)
    return NominalModel(X.copy(), weights, ls, float(ridge), y_mean, y_std, scaler, n_lags)


def predict(model: NominalModel, e) -> float:
    """Nominal state for a single scaled feature vector."""
    e = np.asarray(e, dtype=float)
    if e.ndim != 1:
        raise ValueError("expected a single feature vector")
    return float(model.predict_many(e[None, :])[0])


def rmse(model: NominalModel, samples: Samples) -> float:
    err = model.predict_many(samples.X) - samples.y
    return float(np.sqrt(np.mean(err**2)))


def subsample(samples: Samples, max_points: int = MAX_TRAINING_POINTS) -> Samples:
    """Every k-th sample so that at most ``max_points`` remain."""
    stride = max(1, -(-len(samples) // max_points))
    return samples.subset(slice(None, None, stride))


def select_hyperparameters(
    samples: Samples,
    lengthscale_factors=(0.5, 1.0, 2.0, 4.0),
    ridges=(1e-4, 1e-3, 1e-2, 1e-1),
    holdout: float = 0.2,
) -> tuple[float, float, float]:
    """Grid search over isotropic lengthscale and ridge on a chronological hold-out.

    Lengthscale candidates are ``factor * sqrt(dim)``. Returns
    ``(lengthscale, ridge, holdout_rmse)``.
    """
    n = len(samples)
    split = int(round(n * (1.0 - holdout)))
    if split < 2 or split >= n:
        raise ValueError("not enough samples for a hold-out split")
    train, valid = samples.subset(slice(0, split)), samples.subset(slice(split, None))
    base = np.sqrt(samples.X.shape[1])
    best = None
    for factor, ridge in itertools.product(lengthscale_factors, ridges):
        try:
            model = fit(train.X, train.y, factor * base, ridge)
        except NominalFitError:
            continue
        score = rmse(model, valid)
        log.debug("lengthscale %.3g ridge %.1e: holdout rmse %.4f", factor * base, ridge, score)
        if best is None or score < best[2]:
            best = (float(factor * base), float(ridge), score)
    if best is None:
        raise NominalFitError("no hyperparameter combination could be fitted")
    return best


def fit_nominal(
    trace,
    n_lags: int = DEFAULT_LAGS,
    lengthscale_factors=(0.5, 1.0, 2.0, 4.0),
    ridges=(1e-4, 1e-3, 1e-2, 1e-1),
    max_points: int = MAX_TRAINING_POINTS,
) -> tuple[NominalModel, float]:
    """Features, hyperparameter search and final fit on a request-free trace.

    Returns the model (trained on all subsampled points) and the hold-out RMSE
    of the selected hyperparameters.
    """
    samples = subsample(build_features(trace, n_lags), max_points)
    lengthscale, ridge, score = select_hyperparameters(samples, lengthscale_factors, ridges)
    model = fit(samples.X, samples.y, lengthscale, ridge, scaler=samples.scaler, n_lags=n_lags)
    return model, score
