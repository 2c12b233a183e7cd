"""Score sharpening and the weighted binary cross-entropy matching loss."""

import numpy as np
from scipy.special import logsumexp

from ..models.errors import ShapeMismatch


CLAMP_LOW = 1e-7
CLAMP_HIGH = 1.0 - 1e-7


def sharpen_scores(X: np.ndarray, temperature: float) -> np.ndarray:
    """Row-wise softmax of X / temperature, computed through log-sum-exp."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return X.copy()
    logits = X / temperature
    return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))


def bce_weight(n_t: int) -> float:
    """Positive-class weight k = n_t - 1."""
    return float(n_t - 1)


def weighted_bce_loss(y_hat: np.ndarray, y: np.ndarray, n_t: int = None) -> float:
    """
    Weighted binary cross-entropy over an n_d x n_t score map.

    Args:
        y_hat: Predicted scores, clamped to [1e-7, 1 - 1e-7]
        y: Binary ground-truth assignment map
        n_t: Number of tracklets; defaults to the number of columns

    Returns:
        -(1 / (n_d n_t)) * sum(k y log y_hat + (1 - y) log(1 - y_hat)) with k = n_t - 1
    """
    y_hat = np.asarray(y_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if y_hat.shape != y.shape or y_hat.ndim != 2:
        raise ShapeMismatch(f"scores {y_hat.shape} and labels {y.shape} differ")
    n_t = y.shape[1] if n_t is None else n_t
    if y.size == 0:
        return 0.0
    p = np.clip(y_hat, CLAMP_LOW, CLAMP_HIGH)
    k = bce_weight(n_t)
    total = np.sum(k * y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(-total / y.size)
