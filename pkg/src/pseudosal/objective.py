"""Soft F-beta loss on continuous predictions against discrete targets.

With predictions ``p`` and binary targets ``t``::

    tp = sum(p * t)      fp = sum(p * (1 - t))      fn = sum((1 - p) * t)

precision and recall are epsilon-smoothed, and the image-level loss is
``1 - F_beta``. An empty target with an empty prediction scores ``F = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BinaryMask, SaliencyMap
from .errors import InvalidArgument


@dataclass(frozen=True)
class LossConfig:
    beta_sq: float = 0.3
    epsilon: float = 1e-7

    def __post_init__(self):
        if not self.beta_sq > 0:
            raise InvalidArgument("beta_sq must be > 0")
        if not self.epsilon > 0:
            raise InvalidArgument("epsilon must be > 0")


@dataclass(frozen=True)
class ContingencyTotals:
    tp: float
    fp: float
    fn: float


def _arrays(pred, target):
    p = np.asarray(pred.values if isinstance(pred, SaliencyMap) else pred, dtype=np.float64)
    t = np.asarray(target.values if isinstance(target, BinaryMask) else target, dtype=np.float64)
    if p.shape != t.shape:
        raise InvalidArgument(f"prediction {p.shape} and target {t.shape} differ in shape")
    return p.ravel(), t.ravel()


def soft_contingency(pred, target) -> ContingencyTotals:
    p, t = _arrays(pred, target)
    return ContingencyTotals(tp=float(np.sum(p * t)), fp=float(np.sum(p * (1 - t))), fn=float(np.sum((1 - p) * t)))


def precision_recall(totals: ContingencyTotals, epsilon: float = 1e-7) -> tuple[float, float]:
    precision = (totals.tp + epsilon) / (totals.tp + totals.fp + epsilon)
    recall = (totals.tp + epsilon) / (totals.tp + totals.fn + epsilon)
    return precision, recall


def f_beta_from_pr(precision: float, recall: float, beta_sq: float = 0.3) -> float:
    denom = beta_sq * precision + recall
    if denom == 0:
        return 0.0
    return (1 + beta_sq) * precision * recall / denom


def f_beta(totals: ContingencyTotals, cfg: LossConfig = LossConfig()) -> float:
    return f_beta_from_pr(*precision_recall(totals, cfg.epsilon), cfg.beta_sq)


def image_level_loss(pred, target, cfg: LossConfig = LossConfig()) -> float:
    return 1.0 - f_beta(soft_contingency(pred, target), cfg)


def loss_gradient(pred, target, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """Analytic derivative of ``image_level_loss`` with respect to each prediction."""
    p, t = _arrays(pred, target)
    shape = np.shape(pred.values if isinstance(pred, SaliencyMap) else pred)
    b, e = cfg.beta_sq, cfg.epsilon
    tp = np.sum(p * t)
    fp = np.sum(p * (1 - t))
    fn = np.sum((1 - p) * t)
    # tp + fn = |t| does not depend on p, so recall only moves through tp
    P_num, P_den = tp + e, tp + fp + e
    R_num, R_den = tp + e, tp + fn + e
    P, R = P_num / P_den, R_num / R_den
    # dP/dp_i = (t_i * P_den - P_num) / P_den^2  (d(tp+fp)/dp_i = 1)
    dP = (t * P_den - P_num) / P_den ** 2
    dR = t / R_den
    denom = b * P + R
    dF_dP = (1 + b) * R * R / denom ** 2
    dF_dR = (1 + b) * b * P * P / denom ** 2
    grad = -(dF_dP * dP + dF_dR * dR)
    return grad.reshape(shape)


def fusion_loss(pred, targets: Sequence, cfg: LossConfig = LossConfig()) -> float:
    if len(targets) == 0:
        raise InvalidArgument("fusion loss needs at least one target")
    return float(np.mean([image_level_loss(pred, t, cfg) for t in targets]))


def fusion_gradient(pred, targets: Sequence, cfg: LossConfig = LossConfig()) -> np.ndarray:
    if len(targets) == 0:
        raise InvalidArgument("fusion loss needs at least one target")
    return np.mean([loss_gradient(pred, t, cfg) for t in targets], axis=0)


def torch_fbeta_loss(pred, target, beta_sq: float = 0.3, epsilon: float = 1e-7):
    """Batched ``1 - F_beta`` for torch tensors of shape ``(B, ...)``; returns ``(B,)``."""
    p = pred.flatten(1)
    t = target.flatten(1).to(p.dtype)
    tp = (p * t).sum(1)
    fp = (p * (1 - t)).sum(1)
    fn = ((1 - p) * t).sum(1)
    precision = (tp + epsilon) / (tp + fp + epsilon)
    recall = (tp + epsilon) / (tp + fn + epsilon)
    f = (1 + beta_sq) * precision * recall / (beta_sq * precision + recall)
    return 1 - f
