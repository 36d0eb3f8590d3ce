"""Plain-numpy numeric kernels.

These are the single source of truth for the math also used inside the
autodiff ops and the evaluation metrics.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError

BCE_EPS = 1e-7


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, max-shifted for overflow safety."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def bce_loss(pred: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy; predictions clamped to [eps, 1-eps]."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if pred.shape != labels.shape:
        raise ShapeError(
            f"bce_loss: {pred.shape[0]} predictions vs {labels.shape[0]} labels"
        )
    if pred.size == 0:
        raise ShapeError("bce_loss: empty input")
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)
