"""Label-smoothed targets and the cross-entropy built on them.

The smoothed target for a sample of class ``y`` puts ``1 - eps + eps / Y`` on
``y`` and ``eps / Y`` everywhere else. Cross-entropy against that target equals
``(1 - eps) * H(one_hot, q) + eps * H(uniform, q)``; both forms are provided so
the identity can be checked numerically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import LabelOutOfRange, ShapeMismatch

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class SmoothingParams:
    epsilon: float = 0.1
    num_classes: int = 2

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")


def _check_labels(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size and (labels.min() < 1 or labels.max() > num_classes):
        raise LabelOutOfRange(f"labels must lie in 1..{num_classes}")
    return labels


def one_hot(labels, num_classes: int, dtype=np.float64) -> np.ndarray:
    labels = _check_labels(labels, num_classes)
    out = np.zeros((labels.size, num_classes), dtype=dtype)
    out[np.arange(labels.size), labels - 1] = 1.0
    return out


def smooth_targets(labels, params: SmoothingParams, dtype=np.float64) -> np.ndarray:
    """Rows of ``(1 - eps) * one_hot + eps / Y`` for 1-based ``labels``."""
    eps, y = params.epsilon, params.num_classes
    labels = _check_labels(labels, y)
    out = np.full((labels.size, y), eps / y, dtype=dtype)
    out[np.arange(labels.size), labels - 1] = 1.0 - eps + eps / y
    return out


def _probs_tensor(probs) -> Tensor:
    return probs if isinstance(probs, Tensor) else Tensor(np.asarray(probs, dtype=np.float64))


def cross_entropy(probs, targets, reduction: str = "sum") -> Tensor:
    """``-sum(targets * log(max(probs, 1e-12)))`` over the batch.

    ``probs`` may be a tape tensor (typically a softmax output), in which case
    the result is differentiable. ``reduction="mean"`` divides by batch size.
    """
    q = _probs_tensor(probs)
    p = np.asarray(targets, dtype=q.dtype)
    if q.shape != p.shape or q.ndim != 2:
        raise ShapeMismatch(f"probabilities {q.shape} and targets {p.shape} must match (batch, Y)")
    clamped = np.maximum(q.values, PROB_FLOOR)
    scale = 1.0 / len(p) if reduction == "mean" else 1.0
    value = -(p * np.log(clamped)).sum() * scale

    def vjp(g):
        grad = -p / clamped * (q.values >= PROB_FLOOR)
        return (grad * (g * scale),)

    return Tensor._from_op(np.asarray(value, dtype=q.dtype), (q,), vjp, "cross_entropy")


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


def decomposed_loss(probs, labels, params: SmoothingParams) -> float:
    """``sum_i [(1 - eps) H(one_hot_i, q_i) + eps H(uniform, q_i)]``."""
    q = probs.values if isinstance(probs, Tensor) else np.asarray(probs, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != params.num_classes:
        raise ShapeMismatch(f"probabilities must be (batch, {params.num_classes}), got {q.shape}")
    labels = _check_labels(labels, params.num_classes)
    if labels.size != q.shape[0]:
        raise ShapeMismatch(f"{labels.size} labels for {q.shape[0]} rows")
    logq = np.log(np.maximum(q, PROB_FLOOR))
    hard = -logq[np.arange(labels.size), labels - 1]
    uniform = -logq.mean(axis=1)
    eps = params.epsilon
    return float(((1.0 - eps) * hard + eps * uniform).sum())


def loss_grad_logits(probs, targets) -> np.ndarray:
    """Gradient of the summed loss with respect to the softmax logits: ``q - p``."""
    q = np.asarray(probs.values if isinstance(probs, Tensor) else probs)
    p = np.asarray(targets)
    if q.shape != p.shape:
        raise ShapeMismatch(f"probabilities {q.shape} and targets {p.shape} must match")
    return q - p
