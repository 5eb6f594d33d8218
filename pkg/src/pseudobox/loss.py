"""Unsupervised losses for the student, the loss combiner and the EMA teacher update.

Loss functions return a :class:`LossValue` carrying the analytic gradient with
respect to the student-side input, flattened row-major.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .boxcore import Box, boxes_to_array, iou_rows
from .errors import InvalidConfigError, InvalidInputError

WEIGHT_MODES = ("uniform", "iou", "inverse-iou")
LABEL_MODES = ("hard", "soft")
LOG_EPS = 1e-12


@dataclass(frozen=True)
class RegWeightMode:
    kind: str = "inverse-iou"
    lam: float = 5.0

    def __post_init__(self):
        if self.kind not in WEIGHT_MODES:
            raise InvalidConfigError(f"weight mode must be one of {WEIGHT_MODES}, got {self.kind!r}",
                                     key="loss.weight_mode")
        if self.kind == "inverse-iou" and not self.lam > 0:
            raise InvalidConfigError(f"lambda must be > 0, got {self.lam}", key="loss.lambda")


@dataclass
class LossValue:
    value: float
    gradient: np.ndarray


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def reg_weight(v_iou: float, mode: RegWeightMode) -> float:
    """Per-proposal regression weight. The inverse-IoU weight is
    ``sigmoid(v_iou ** -lam)``, equal to 1 in the ``v_iou -> 0`` limit.
    """
    if mode.kind == "uniform":
        return 1.0
    if mode.kind == "iou":
        return float(v_iou)
    if v_iou <= 0.0:
        return 1.0
    log_x = -mode.lam * math.log(v_iou)
    if log_x > 700.0:
        return 1.0
    return _sigmoid(math.exp(log_x))


def reg_weight_log_complement(v_iou: float, mode: RegWeightMode) -> float:
    """``log(1 - reg_weight(v_iou, mode))`` without cancellation.

    The inverse-IoU weight rounds to 1.0 in double precision once ``v_iou**-lam``
    exceeds about 37; its log-complement stays resolvable far below that.
    """
    if mode.kind == "uniform":
        return -math.inf
    if mode.kind == "iou":
        return math.log1p(-v_iou) if v_iou < 1.0 else -math.inf
    if v_iou <= 0.0:
        return -math.inf
    log_x = -mode.lam * math.log(v_iou)
    if log_x > 700.0:
        return -math.inf
    x = math.exp(log_x)
    # log(1 - sigmoid(x)) = -softplus(x)
    return -(x + math.log1p(math.exp(-x)))


def _check_pairs(student, teacher):
    if len(student) != len(teacher):
        raise InvalidInputError(f"student/teacher length mismatch: {len(student)} vs {len(teacher)}")


def unsup_reg_loss(student: Sequence[Box], teacher: Sequence[Box], mode: RegWeightMode) -> LossValue:
    """Weighted sum over pairs of the mean absolute corner difference.

    The weight depends on IoU(teacher, student) but is held constant for the
    gradient.
    """
    _check_pairs(student, teacher)
    if not student:
        return LossValue(0.0, np.zeros(0))
    s = boxes_to_array(student)
    t = boxes_to_array(teacher)
    w = np.array([reg_weight(v, mode) for v in iou_rows(t, s)])
    value = float(np.sum(w * np.mean(np.abs(s - t), axis=1)))
    grad = (w[:, None] * np.sign(s - t) / 4.0).ravel()
    return LossValue(value, grad)


def regression_targets(label_mode: str, corrected: Sequence[Box], teacher_refined: Sequence[Box]) -> list[Box]:
    """Hard labels regress the corrected pseudo box; soft labels the teacher's per-proposal output."""
    if label_mode not in LABEL_MODES:
        raise InvalidConfigError(f"label mode must be one of {LABEL_MODES}, got {label_mode!r}", key="loss.label_mode")
    return list(corrected if label_mode == "hard" else teacher_refined)


# Loss-design variants compared in the regression ablation: (label mode, weight mode)
ABLATION_VARIANTS = {
    "soft": ("soft", "uniform"),
    "hard": ("hard", "uniform"),
    "hard_iou": ("hard", "iou"),
    "hard_inv_iou": ("hard", "inverse-iou"),
}


def unsup_cls_loss(student: np.ndarray, teacher: np.ndarray) -> LossValue:
    """Soft cross-entropy weighted by each teacher vector's max probability.

    Gradient is with respect to the student probabilities themselves.
    """
    s = np.asarray(student, dtype=np.float64)
    t = np.asarray(teacher, dtype=np.float64)
    if s.size == 0 and t.size == 0:
        return LossValue(0.0, np.zeros(0))
    if s.shape != t.shape or s.ndim != 2:
        raise InvalidInputError(f"score arrays must share an (n, C+1) shape, got {s.shape} and {t.shape}")
    w = t.max(axis=1)
    safe = np.maximum(s, LOG_EPS)
    value = float(np.sum(w * np.sum(-t * np.log(safe), axis=1)))
    grad = (-w[:, None] * t / safe).ravel()
    return LossValue(max(value, 0.0), grad)


def total_loss(sup_losses: Sequence[float], unsup_losses: Sequence[float], alpha: float) -> float:
    if not alpha >= 0:
        raise InvalidConfigError(f"alpha must be >= 0, got {alpha}", key="loss.alpha")
    sup = math.fsum(sup_losses) / len(sup_losses) if len(sup_losses) else 0.0
    unsup = math.fsum(unsup_losses) / len(unsup_losses) if len(unsup_losses) else 0.0
    return sup + alpha * unsup


def ema_update(teacher, student, momentum: float) -> np.ndarray:
    t = np.asarray(teacher, dtype=np.float64)
    s = np.asarray(student, dtype=np.float64)
    if t.shape != s.shape:
        raise InvalidInputError(f"teacher/student parameter shapes differ: {t.shape} vs {s.shape}")
    if not 0.0 <= momentum <= 1.0:
        raise InvalidConfigError(f"EMA momentum must be in [0, 1], got {momentum}", key="loss.ema_momentum")
    if momentum == 1.0:
        return t.copy()
    if momentum == 0.0:
        return s.copy()
    return momentum * t + (1.0 - momentum) * s
