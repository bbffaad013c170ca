"""Small weighted-statistics helpers shared by the fitting modules."""
from __future__ import annotations

import numpy as np

from .errors import AllZeroWeights, DegenerateTargets


def weighted_mean(x, w, axis=0):
    w = np.asarray(w, dtype=float)
    return np.tensordot(w, np.asarray(x, dtype=float), axes=(0, axis)) / w.sum()


def weighted_std(X, w) -> np.ndarray:
    """Column-wise weighted (population) standard deviation."""
    X = np.asarray(X, dtype=float)
    w = np.asarray(w, dtype=float)
    mu = w @ X / w.sum()
    var = w @ (X - mu) ** 2 / w.sum()
    return np.sqrt(np.maximum(var, 0.0))


def weighted_r2(targets, predictions, weights) -> float:
    """``1 - sum w (y - yhat)^2 / sum w (y - ybar_w)^2`` with weighted mean ``ybar_w``."""
    y = np.asarray(targets, dtype=float)
    yhat = np.asarray(predictions, dtype=float)
    w = np.asarray(weights, dtype=float)
    if not (len(y) == len(yhat) == len(w)):
        raise ValueError("targets, predictions and weights must have equal length")
    if w.sum() <= 0:
        raise AllZeroWeights("weights sum to zero")
    ybar = w @ y / w.sum()
    ss_tot = float(w @ (y - ybar) ** 2)
    if ss_tot <= 0.0:
        raise DegenerateTargets("targets have zero weighted variance")
    ss_res = float(w @ (y - yhat) ** 2)
    return 1.0 - ss_res / ss_tot


def effective_sample_size(weights) -> float:
    """Kish effective sample size ``(sum w)^2 / sum w^2``."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or not (w > 0).any():
        raise AllZeroWeights("need at least one positive weight")
    w = w / w.max()  # scale-free; makes equal weights exactly n
    return float(w.sum() ** 2 / (w @ w))
