"""Pseudo-label correction: multi-round refining followed by multi-vote weighting.

Given thresholded detections for one image, each box is fed back through the
scoring head ``n_r`` times, then jittered ``n_j`` times; the jittered copies are
refined once more and averaged with their own-class scores as weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .boxcore import Box, ScoredBox, array_to_boxes, boxes_to_array, iou_rows
from .errors import InvalidConfigError
from .jitter import JitterConfig, jitter_box
from .scoring import Scene, ScoringHead, refine


@dataclass(frozen=True)
class CorrectionConfig:
    n_r: int = 2
    jitter: JitterConfig = field(default_factory=JitterConfig)
    score_threshold: float = 0.7
    nms_iou: float = 0.5
    vote: bool = True
    include_unjittered: bool = False

    def __post_init__(self):
        if int(self.n_r) != self.n_r or self.n_r < 0:
            raise InvalidConfigError(f"n_r must be a non-negative integer, got {self.n_r}", key="correction.n_r")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise InvalidConfigError(f"score_threshold must be in [0, 1], got {self.score_threshold}",
                                     key="correction.score_threshold")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise InvalidConfigError(f"nms_iou must be in [0, 1], got {self.nms_iou}", key="correction.nms_iou")


@dataclass
class RefineHistory:
    """Boxes and score vectors for rounds ``0..n_r``; round 0 is the input."""

    boxes: list[list[Box]]
    scores: list[np.ndarray]
    labels: np.ndarray

    @property
    def n_rounds(self) -> int:
        return len(self.boxes) - 1

    def foreground(self, r: int) -> np.ndarray:
        """Own-class score of every box at round ``r``."""
        s = self.scores[r]
        if len(self.labels) == 0:
            return np.zeros(0)
        return s[np.arange(len(self.labels)), self.labels]


@dataclass
class PseudoLabelSet:
    image_id: str
    labels: list[ScoredBox]
    originals: list[ScoredBox] = field(default_factory=list)
    history: RefineHistory | None = None
    below_threshold: int = 0

    def __len__(self):
        return len(self.labels)


def _stack_scores(vectors, k):
    return np.asarray(vectors, dtype=np.float64).reshape(-1, k)


def multi_round_refine(head: ScoringHead, scene: Scene, initial: Sequence[ScoredBox], n_r: int,
                       rng: np.random.Generator) -> RefineHistory:
    k = scene.num_classes + 1
    boxes = [d.box for d in initial]
    history = RefineHistory(boxes=[boxes], scores=[_stack_scores([d.scores for d in initial], k)],
                            labels=np.array([d.label for d in initial], dtype=np.int64))
    for _ in range(n_r):
        boxes, scores = refine(head, scene, boxes, rng)
        history.boxes.append(boxes)
        history.scores.append(_stack_scores(scores, k))
    return history


def stability_metrics(history: RefineHistory) -> list[tuple[float, float]]:
    """Per-round ``(D_cls, D_loc)``: mean absolute own-class score change and
    one minus mean IoU between consecutive rounds, for ``r = 1..n_r``.
    """
    n = len(history.labels)
    if n == 0:
        return []
    out = []
    for r in range(1, history.n_rounds + 1):
        d_cls = float(np.sum(np.abs(history.foreground(r) - history.foreground(r - 1))) / n)
        overlap = iou_rows(boxes_to_array(history.boxes[r]), boxes_to_array(history.boxes[r - 1]))
        d_loc = 1.0 - float(np.sum(overlap) / n)
        out.append((d_cls, min(max(d_loc, 0.0), 1.0)))
    return out


def vote(boxes: np.ndarray, weights: np.ndarray) -> np.ndarray | None:
    """Weighted corner-wise mean of (n, 4) boxes; None if the weights sum to 0."""
    total = float(np.sum(weights))
    if not total > 0.0:
        return None
    w = weights / total
    # offsets from the first voter: identical voters reproduce it exactly
    return boxes[0] + w @ (boxes - boxes[0])


def multi_vote_weight(head: ScoringHead, scene: Scene, b: Box, cfg: JitterConfig,
                      rng: np.random.Generator, label: int | None = None,
                      include_unjittered: bool = False) -> Box:
    """Jitter ``b``, refine the copies and return their score-weighted average.

    Weights are each voter's score for ``label``; with ``label=None`` the
    voter's best foreground score is used instead.
    """
    voters = jitter_box(b, cfg, rng)
    if include_unjittered:
        voters = [b] + voters
    refined, scores = refine(head, scene, voters, rng)
    s = np.asarray(scores, dtype=np.float64)
    weights = s[:, :-1].max(axis=1) if label is None else s[:, label]
    out = vote(boxes_to_array(refined), weights)
    if out is None:
        return refine(head, scene, [b], rng)[0][0]
    return array_to_boxes(out)[0]


def select(dets: Sequence[ScoredBox], threshold: float) -> list[ScoredBox]:
    return [d for d in dets if d.confidence >= threshold]


def correct(head: ScoringHead, scene: Scene, dets: Sequence[ScoredBox], cfg: CorrectionConfig,
            rng: np.random.Generator) -> PseudoLabelSet:
    if not isinstance(cfg, CorrectionConfig):
        raise InvalidConfigError(f"expected CorrectionConfig, got {type(cfg).__name__}")
    kept = select(dets, cfg.score_threshold)
    history = multi_round_refine(head, scene, kept, cfg.n_r, rng)
    final_boxes = history.boxes[-1]
    if cfg.vote:
        final_boxes = [
            multi_vote_weight(head, scene, b, cfg.jitter, rng, label=int(lab),
                              include_unjittered=cfg.include_unjittered)
            for b, lab in zip(final_boxes, history.labels)
        ]
    final_scores = history.scores[-1]
    labels = []
    for b, s, lab in zip(final_boxes, final_scores, history.labels):
        labels.append(ScoredBox(b.clip(scene.width, scene.height), tuple(s), label=int(lab)))
    below = sum(1 for d in labels if d.confidence < cfg.score_threshold)
    return PseudoLabelSet(scene.image_id, labels, originals=list(kept), history=history, below_threshold=below)


def mean_shift(pseudo: PseudoLabelSet) -> float:
    """Mean absolute corner displacement (pixels) between corrected and original boxes."""
    if not pseudo.labels:
        return 0.0
    new = boxes_to_array(d.box for d in pseudo.labels)
    old = boxes_to_array(d.box for d in pseudo.originals)
    return float(np.mean(np.abs(new - old)))

