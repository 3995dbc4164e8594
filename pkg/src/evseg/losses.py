"""Self-supervised prediction losses and their gradients.

Two signals per frame, both reduced by a plain sum over all G*M entries so
that thresholds expressed in absolute units stay meaningful at full feature
scale (a mean reduction is available for dimension-independent thresholds):

- prediction loss: squared L2 distance between the predicted and the actual
  next-frame features.
- motion-weighted loss: the squared prediction residual modulated elementwise
  by the squared one-step feature difference, then squared-summed. The double
  squaring gives the signal a fourth-power character with a steep dynamic
  range; it emphasizes entries that are both mispredicted and changing.

Gradients flow only through the prediction; the encoded features are
constants produced by a frozen encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossSample:
    """Per-frame loss record."""

    t: int
    pred_loss: float
    mw_loss: float


def _check_shapes(*arrays: np.ndarray) -> None:
    first = arrays[0].shape
    for arr in arrays[1:]:
        if arr.shape != first:
            raise ValueError(f"shape mismatch: {arr.shape} != {first}")


def prediction_loss(
    y_pred: np.ndarray, next_frame: np.ndarray, mean_reduction: bool = False,
) -> tuple[float, np.ndarray]:
    """Sum of squared differences and its gradient w.r.t. y_pred."""
    y_pred = np.asarray(y_pred, dtype=np.float64)
    next_frame = np.asarray(next_frame, dtype=np.float64)
    _check_shapes(y_pred, next_frame)
    diff = next_frame - y_pred
    loss = float(np.sum(diff * diff))
    grad = -2.0 * diff
    if mean_reduction:
        scale = diff.size
        loss /= scale
        grad = grad / scale
    return loss, grad


def motion_weighted_loss(
    y_pred: np.ndarray, cur_frame: np.ndarray, next_frame: np.ndarray,
    mean_reduction: bool = False,
) -> tuple[float, np.ndarray]:
    """Motion-masked loss sum((d * m)^2) with d, m the squared residual and
    squared one-step difference; gradient w.r.t. y_pred only."""
    y_pred = np.asarray(y_pred, dtype=np.float64)
    cur_frame = np.asarray(cur_frame, dtype=np.float64)
    next_frame = np.asarray(next_frame, dtype=np.float64)
    _check_shapes(y_pred, cur_frame, next_frame)
    residual = next_frame - y_pred
    d = residual * residual
    motion = next_frame - cur_frame
    m = motion * motion
    prod = d * m
    loss = float(np.sum(prod * prod))
    # d(loss)/d(y) = 2*(d*m)*m * d(d)/d(y) = -4 * residual^3 * m^2
    grad = -4.0 * residual * d * (m * m)
    if mean_reduction:
        scale = residual.size
        loss /= scale
        grad = grad / scale
    return loss, grad


def compute_both(
    y_pred: np.ndarray, cur_frame: np.ndarray, next_frame: np.ndarray,
    t: int, mean_reduction: bool = False,
) -> tuple[LossSample, np.ndarray, np.ndarray]:
    """Both loss signals for frame t plus both gradients (pred, mw)."""
    pl, pg = prediction_loss(y_pred, next_frame, mean_reduction)
    ml, mg = motion_weighted_loss(y_pred, cur_frame, next_frame, mean_reduction)
    return LossSample(t=t, pred_loss=pl, mw_loss=ml), pg, mg
