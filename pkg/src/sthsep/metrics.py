"""Forecast metrics and reference baselines."""

from __future__ import annotations

import warnings

import numpy as np


def metrics(pred, target) -> tuple[float, float]:
    """(MAE, RMSE) over all entries."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return float(np.abs(diff).mean()), float(np.sqrt((diff * diff).mean()))


def last_value(X: np.ndarray, H: int) -> np.ndarray:
    """Repeat the final observation. ``X`` is (..., L, N) -> (..., H, N)."""
    X = np.asarray(X)
    return np.repeat(X[..., -1:, :], H, axis=-2)


def historical_average(X: np.ndarray, H: int) -> np.ndarray:
    X = np.asarray(X)
    # shifting by the last value keeps constant lookbacks exact
    ref = X[..., -1:, :]
    return np.repeat(ref + (X - ref).mean(axis=-2, keepdims=True), H, axis=-2)


def seasonal_naive(X: np.ndarray, H: int, period: int = 24) -> np.ndarray:
    """Repeat the last full season; falls back to last value when L < period."""
    X = np.asarray(X)
    L = X.shape[-2]
    if L < period:
        warnings.warn(f"lookback {L} shorter than season {period}; using last value", RuntimeWarning,
                      stacklevel=2)
        return last_value(X, H)
    idx = L - period + (np.arange(H) % period)
    return X[..., idx, :]


BASELINES = {
    "last_value": last_value,
    "historical_average": historical_average,
    "seasonal_naive": seasonal_naive,
}


def baselines(X: np.ndarray, H: int) -> dict[str, np.ndarray]:
    return {name: fn(X, H) for name, fn in BASELINES.items()}
