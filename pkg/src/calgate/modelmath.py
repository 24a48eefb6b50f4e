"""Small numerical primitives shared by the calibration pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_FLOOR = 1e-12


def _finite(x: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be finite")
    return x


def softmax(logits, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max subtraction) along ``axis``."""
    z = _finite(np.asarray(logits, dtype=np.float64), "logits")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    z = _finite(np.asarray(logits, dtype=np.float64), "logits")
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def argmax(x, axis: int = -1):
    """Argmax with ties broken to the lowest index (numpy's own rule)."""
    return np.argmax(np.asarray(x), axis=axis)


def top_k_indices(x, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries of a vector, ties to the lowest index."""
    x = np.asarray(x)
    # stable sort on the negated values keeps lower indices first among ties
    return np.argsort(-x, kind="stable")[:k]


@dataclass(frozen=True)
class MaskedSequence:
    features: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=np.float64)
        if features.ndim != 2 or mask.ndim != 1 or features.shape[0] != mask.shape[0]:
            raise ValueError(f"features {features.shape} and mask {mask.shape} disagree")
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mask entries must be 0 or 1")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "mask", mask)


def masked_mean_pool(seq: MaskedSequence, eps: float = 1e-8) -> np.ndarray:
    """Mean of the valid timesteps: ``sum(u_t h_t) / (sum(u_t) + eps)``."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    total = seq.mask @ seq.features
    return total / (seq.mask.sum() + eps)


def label_smooth(one_hot, epsilon: float) -> np.ndarray:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    y = np.asarray(one_hot, dtype=np.float64)
    if y.ndim != 1 or np.count_nonzero(y == 1) != 1 or np.count_nonzero(y) != 1:
        raise ValueError("target must be a one-hot vector")
    return (1.0 - epsilon) * y + epsilon / y.size


@dataclass(frozen=True)
class ClassWeights:
    weights: tuple[float, ...]

    def __post_init__(self):
        if not all(w > 0 for w in self.weights):
            raise ValueError("class weights must be positive")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=np.float64)


def class_weights_from_freq(counts) -> ClassWeights:
    """Inverse-frequency weights normalized so uniform counts give all ones.

    ``w_k = (N / K) / max(count_k, 1)``; a class never seen is weighted as
    if it had been seen once.
    """
    counts = np.asarray(counts)
    if counts.ndim != 1 or np.any(counts < 0):
        raise ValueError("counts must be a vector of nonnegative integers")
    n = counts.sum()
    if n == 0:
        raise ValueError("all class counts are zero")
    w = (n / counts.size) / np.maximum(counts, 1)
    return ClassWeights(tuple(float(v) for v in w))


def weighted_cross_entropy(probs, smoothed_target, weights: ClassWeights | None = None,
                           clamp: bool = False) -> float:
    """``-sum_k w_k * t_k * log p_k``.

    A zero probability where the target has mass raises unless ``clamp`` is
    set, in which case probabilities are floored at ``LOG_FLOOR``.
    """
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(smoothed_target, dtype=np.float64)
    w = np.ones_like(p) if weights is None else weights.as_array()
    if not (p.shape == t.shape == w.shape):
        raise ValueError("probs, target and weights must have the same length")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("probs must be a probability distribution")
    if abs(t.sum() - 1.0) > 1e-9:
        raise ValueError("target must sum to 1")
    live = t > 0
    if np.any(p[live] <= 0):
        if not clamp:
            raise ValueError("zero probability on a class with target mass; pass clamp=True to floor it")
        p = np.maximum(p, LOG_FLOOR)
    return float(-np.sum(w[live] * t[live] * np.log(p[live])))
