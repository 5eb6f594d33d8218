"""Box geometry: IoU, affine alignment, class-wise NMS and greedy matching.

Boxes are ``(x1, y1, x2, y2)`` in pixel coordinates of the image they live in.
All arithmetic is float64. Degenerate (zero-area) boxes are legal and have IoU 0
against everything, including themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidConfigError, InvalidInputError

SCORE_SUM_TOL = 1e-6


@dataclass(frozen=True, slots=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise InvalidInputError(f"non-finite box coordinate {name}={v!r}")
            object.__setattr__(self, name, float(v))

    @classmethod
    def from_seq(cls, coords: Sequence[float]) -> "Box":
        if len(coords) != 4:
            raise InvalidInputError(f"box needs 4 coordinates, got {len(coords)}")
        return cls(*coords).normalized()

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return max(self.width, 0.0) * max(self.height, 0.0)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def normalized(self) -> "Box":
        """Sort corners so that x1 <= x2 and y1 <= y2."""
        if self.x1 <= self.x2 and self.y1 <= self.y2:
            return self
        return Box(min(self.x1, self.x2), min(self.y1, self.y2),
                   max(self.x1, self.x2), max(self.y1, self.y2))

    def clip(self, width: float, height: float) -> "Box":
        return Box(min(max(self.x1, 0.0), width), min(max(self.y1, 0.0), height),
                   min(max(self.x2, 0.0), width), min(max(self.y2, 0.0), height))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


def boxes_to_array(boxes: Iterable[Box]) -> np.ndarray:
    arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def array_to_boxes(arr: np.ndarray) -> list[Box]:
    """Rows of an (n, 4) array to normalized boxes."""
    arr = np.asarray(arr, dtype=np.float64).reshape(-1, 4)
    lo = np.minimum(arr[:, :2], arr[:, 2:])
    hi = np.maximum(arr[:, :2], arr[:, 2:])
    return [Box(*row) for row in np.concatenate([lo, hi], axis=1).tolist()]


@dataclass(frozen=True, slots=True)
class ScoredBox:
    """A box with a (C+1)-long probability vector; background is the last entry.

    ``label`` defaults to the argmax over foreground classes. It may be pinned
    explicitly: corrected pseudo-labels keep the class they were filtered with
    even if refined scores later favour another class.
    """

    box: Box
    scores: tuple[float, ...]
    label: int = field(default=-1)

    def __post_init__(self):
        scores = tuple(float(s) for s in self.scores)
        if len(scores) < 2:
            raise InvalidInputError("score vector needs at least one foreground class plus background")
        if any(not (0.0 <= s <= 1.0) for s in scores):
            raise InvalidInputError(f"scores must lie in [0, 1]: {scores}")
        if abs(math.fsum(scores) - 1.0) > SCORE_SUM_TOL:
            raise InvalidInputError(f"scores must sum to 1, got {math.fsum(scores)!r}")
        object.__setattr__(self, "scores", scores)
        label = self.label
        if label < 0:
            fg = scores[:-1]
            label = max(range(len(fg)), key=fg.__getitem__)
        elif label >= len(scores) - 1:
            raise InvalidInputError(f"label {label} is not a foreground class")
        object.__setattr__(self, "label", int(label))

    @property
    def num_classes(self) -> int:
        return len(self.scores) - 1

    @property
    def confidence(self) -> float:
        """Score of this box's own class."""
        return self.scores[self.label]


@dataclass(frozen=True, slots=True)
class AffineTransform:
    """Optional horizontal flip about the source image width, then scale, then translate."""

    scale_x: float = 1.0
    scale_y: float = 1.0
    translate_x: float = 0.0
    translate_y: float = 0.0
    flip_x: bool = False

    def __post_init__(self):
        if not (self.scale_x > 0 and self.scale_y > 0):
            raise InvalidConfigError(f"affine scales must be positive, got ({self.scale_x}, {self.scale_y})", key="scale")

    def inverse(self, image_width: float) -> "AffineTransform":
        # x = W - (x' - tx)/sx  rewritten in flip-first form: (1/sx)(W - x') + tx'
        sx, sy = 1.0 / self.scale_x, 1.0 / self.scale_y
        if self.flip_x:
            tx = image_width + self.translate_x * sx - image_width * sx
        else:
            tx = -self.translate_x * sx
        return AffineTransform(sx, sy, tx, -self.translate_y * sy, self.flip_x)


def apply_affine(boxes: Sequence[Box], t: AffineTransform, image_width: float) -> list[Box]:
    if not boxes:
        return []
    arr = boxes_to_array(boxes)
    if t.flip_x:
        arr[:, [0, 2]] = image_width - arr[:, [0, 2]]
    arr[:, [0, 2]] = arr[:, [0, 2]] * t.scale_x + t.translate_x
    arr[:, [1, 3]] = arr[:, [1, 3]] * t.scale_y + t.translate_y
    return array_to_boxes(arr)


def align_proposals(boxes: Sequence[Box], source: AffineTransform, target: AffineTransform,
                    image_width: float) -> list[Box]:
    """Map boxes from one augmented view into another via the original image frame."""
    return apply_affine(apply_affine(boxes, source.inverse(image_width), image_width), target, image_width)


def iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(inter / union, 1.0)


def iou_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (n, 4) and (m, 4) corner arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = np.clip(a[:, 2] - a[:, 0], 0, None) * np.clip(a[:, 3] - a[:, 1], 0, None)
    area_b = np.clip(b[:, 2] - b[:, 0], 0, None) * np.clip(b[:, 3] - b[:, 1], 0, None)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=(union > 0) & (inter > 0))
    return np.minimum(out, 1.0)


def iou_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise IoU of two equally long (n, 4) corner arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = np.clip(a[:, 2] - a[:, 0], 0, None) * np.clip(a[:, 3] - a[:, 1], 0, None)
    area_b = np.clip(b[:, 2] - b[:, 0], 0, None) * np.clip(b[:, 3] - b[:, 1], 0, None)
    iw = np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0])
    ih = np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = area_a + area_b - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=(union > 0) & (inter > 0))
    return np.minimum(out, 1.0)


def pairwise_iou(A: Sequence[Box], B: Sequence[Box]) -> np.ndarray:
    return iou_arrays(boxes_to_array(A), boxes_to_array(B))


def _confidence_order(dets: Sequence[ScoredBox]) -> list[int]:
    # stable: equal confidences keep input order
    return sorted(range(len(dets)), key=lambda i: -dets[i].confidence)


def nms(dets: Sequence[ScoredBox], iou_threshold: float) -> list[ScoredBox]:
    """Greedy class-wise non-maximum suppression, output sorted by confidence."""
    if not 0.0 <= iou_threshold <= 1.0:
        raise InvalidConfigError(f"nms iou_threshold must be in [0, 1], got {iou_threshold}", key="nms_iou")
    order = _confidence_order(dets)
    if not order:
        return []
    arr = boxes_to_array(d.box for d in dets)
    labels = np.array([d.label for d in dets])
    overlaps = iou_arrays(arr, arr)
    suppressed = np.zeros(len(dets), dtype=bool)
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= (labels == labels[i]) & (overlaps[i] > iou_threshold)
    return [dets[i] for i in keep]


def greedy_match(pred: Sequence[ScoredBox], gt: Sequence[tuple[Box, int]],
                 iou_threshold: float) -> list[tuple[int, int | None]]:
    """Match predictions (highest confidence first) to unclaimed same-class GT.

    Returns ``(pred_index, gt_index or None)`` for every prediction, in
    prediction index order.
    """
    matches: dict[int, int | None] = {}
    if not gt:
        return [(i, None) for i in range(len(pred))]
    overlaps = pairwise_iou([d.box for d in pred], [g for g, _ in gt])
    gt_cls = np.array([c for _, c in gt])
    claimed = np.zeros(len(gt), dtype=bool)
    for i in _confidence_order(pred):
        cand = np.where((gt_cls == pred[i].label) & ~claimed & (overlaps[i] >= iou_threshold))[0]
        if cand.size == 0:
            matches[i] = None
            continue
        j = int(cand[np.argmax(overlaps[i, cand])])
        claimed[j] = True
        matches[i] = j
    return [(i, matches[i]) for i in range(len(pred))]
