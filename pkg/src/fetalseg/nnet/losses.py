"""Segmentation losses with analytic gradients w.r.t. class probabilities.

Both losses consume softmax outputs (N, K, H, W) and integer label maps
(N, H, W) and return (scalar loss, gradient array).  Gradients are taken
w.r.t. the probabilities; the caller chains them through the softmax.
"""

from __future__ import annotations

import numpy as np

__all__ = ["one_hot", "cross_entropy_loss", "soft_dice_loss"]

_P_FLOOR = 1e-12  # keeps log/divide finite when the softmax saturates


def one_hot(labels: np.ndarray, n_classes: int, dtype=np.float32) -> np.ndarray:
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels outside [0, {n_classes})")
    eye = np.eye(n_classes, dtype=dtype)
    return eye[labels].transpose(0, 3, 1, 2)


def cross_entropy_loss(probs: np.ndarray, labels: np.ndarray):
    """Mean pixelwise negative log-likelihood of the true class."""
    n, k, h, w = probs.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels outside [0, {k})")
    p_true = np.take_along_axis(probs, labels[:, None, :, :], axis=1)
    p_safe = np.maximum(p_true, _P_FLOOR)
    m = n * h * w
    loss = float(-np.log(p_safe.astype(np.float64)).sum() / m)
    grad = np.zeros_like(probs)
    np.put_along_axis(grad, labels[:, None, :, :], -1.0 / (m * p_safe), axis=1)
    return loss, grad


def soft_dice_loss(probs: np.ndarray, labels: np.ndarray, eps: float = 1.0):
    """1 - mean soft Dice over the non-background classes.

    Overlaps are pooled over the whole batch per class, with eps added to
    both numerator and denominator so empty classes score 1 (no penalty).
    """
    n, k, h, w = probs.shape
    if k < 2:
        raise ValueError("soft dice needs at least one foreground class")
    target = one_hot(labels, k, dtype=probs.dtype)
    axes = (0, 2, 3)
    inter = (probs[:, 1:] * target[:, 1:]).sum(axis=axes, dtype=np.float64)
    psum = probs[:, 1:].sum(axis=axes, dtype=np.float64)
    tsum = target[:, 1:].sum(axis=axes, dtype=np.float64)
    num = 2.0 * inter + eps
    den = psum + tsum + eps
    dice = num / den
    loss = float(1.0 - dice.mean())

    # d loss / d p_c[i] = -(1/(K-1)) * (2*t_c[i]*den_c - num_c) / den_c^2
    scale = 1.0 / (k - 1)
    coef_t = (2.0 / den).astype(probs.dtype)
    coef_c = (num / (den * den)).astype(probs.dtype)
    grad = np.zeros_like(probs)
    grad[:, 1:] = -scale * (
        target[:, 1:] * coef_t.reshape(1, -1, 1, 1) - coef_c.reshape(1, -1, 1, 1)
    )
    return loss, grad
