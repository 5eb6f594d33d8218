"""Pseudo-label correction and noise-unaware losses for box pseudo-labels."""

from .boxcore import AffineTransform, Box, ScoredBox, apply_affine, greedy_match, iou, nms, pairwise_iou
from .correction import CorrectionConfig, PseudoLabelSet, RefineHistory, correct, multi_round_refine, multi_vote_weight, stability_metrics
from .errors import InvalidConfigError, InvalidInputError, PseudoboxError
from .jitter import JitterConfig, jitter_box, make_rng
from .loss import (LossValue, RegWeightMode, ema_update, reg_weight, reg_weight_log_complement, total_loss,
                   unsup_cls_loss, unsup_reg_loss)
from .scoring import IdentityHead, OracleHead, OracleParams, RecordedHead, Scene, oracle_refine, refine

__version__ = "0.1.0"
