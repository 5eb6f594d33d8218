"""Scoring heads: anything mapping (scene, boxes, rng) to (refined boxes, score vectors).

A head plays the part of a detector's second-stage box head. Correction only
talks to detectors through :func:`refine`. Three heads ship here:

* :class:`IdentityHead` returns boxes untouched with uniform scores.
* :class:`OracleHead` is a synthetic head that pulls boxes toward the scene's
  ground truth and scores them by (noisy) IoU, so the score/localization
  correlation is a dial rather than an accident of training.
* :class:`RecordedHead` replays refinements captured from a real detector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .boxcore import Box, array_to_boxes, boxes_to_array, iou_arrays, iou_rows
from .errors import InvalidConfigError, InvalidInputError

CLUTTER_SCORE_CAP = 0.3


@dataclass(frozen=True)
class Scene:
    image_id: str
    width: float
    height: float
    gt: tuple[tuple[Box, int], ...] = ()
    num_classes: int = 1

    def __post_init__(self):
        object.__setattr__(self, "gt", tuple((b, int(c)) for b, c in self.gt))
        if self.num_classes < 1:
            raise InvalidInputError("scene needs at least one class")
        for b, c in self.gt:
            if not 0 <= c < self.num_classes:
                raise InvalidInputError(f"GT class {c} outside [0, {self.num_classes})")

    @property
    def gt_array(self) -> np.ndarray:
        return boxes_to_array(b for b, _ in self.gt)

    @property
    def gt_classes(self) -> np.ndarray:
        return np.array([c for _, c in self.gt], dtype=np.int64)


class ScoringHead(Protocol):
    def __call__(self, scene: Scene, boxes: Sequence[Box],
                 rng: np.random.Generator) -> tuple[list[Box], list[np.ndarray]]:
        ...


def refine(head: ScoringHead, scene: Scene, boxes: Sequence[Box],
           rng: np.random.Generator) -> tuple[list[Box], list[np.ndarray]]:
    if not boxes:
        return [], []
    out_boxes, out_scores = head(scene, list(boxes), rng)
    if len(out_boxes) != len(boxes) or len(out_scores) != len(boxes):
        raise InvalidInputError(
            f"scoring head returned {len(out_boxes)} boxes / {len(out_scores)} scores for {len(boxes)} inputs")
    return list(out_boxes), [np.asarray(s, dtype=np.float64) for s in out_scores]


class IdentityHead:
    def __call__(self, scene, boxes, rng):
        k = scene.num_classes + 1
        return list(boxes), [np.full(k, 1.0 / k) for _ in boxes]


@dataclass(frozen=True)
class OracleParams:
    kappa: float = 0.3
    tau: float = 0.02
    rho: float = 0.9
    score_noise: float = 0.02

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise InvalidConfigError(f"kappa must be in [0, 1], got {self.kappa}", key="oracle.kappa")
        if not self.tau >= 0.0:
            raise InvalidConfigError(f"tau must be >= 0, got {self.tau}", key="oracle.tau")
        if not 0.0 <= self.rho <= 1.0:
            raise InvalidConfigError(f"rho must be in [0, 1], got {self.rho}", key="oracle.rho")
        if not self.score_noise >= 0.0:
            raise InvalidConfigError(f"score_noise must be >= 0, got {self.score_noise}", key="oracle.score_noise")


def assign_targets(boxes: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the max-IoU GT per box (ties: nearest center, then lowest index).

    Returns ``(index, iou)``; callers must handle ``len(gt) == 0`` themselves.
    """
    overlaps = iou_arrays(boxes, gt)
    centers = 0.5 * (boxes[:, None, :2] + boxes[:, None, 2:])
    gt_centers = 0.5 * (gt[None, :, :2] + gt[None, :, 2:])
    dist = np.sum((centers - gt_centers) ** 2, axis=-1)
    # lexsort: last key is primary
    idx = np.empty(len(boxes), dtype=np.int64)
    cols = np.arange(len(gt))
    for i in range(len(boxes)):
        idx[i] = np.lexsort((cols, dist[i], -overlaps[i]))[0]
    return idx, overlaps[np.arange(len(boxes)), idx]


def oracle_refine(params: OracleParams, scene: Scene, boxes: Sequence[Box],
                  rng: np.random.Generator) -> tuple[list[Box], list[np.ndarray]]:
    n = len(boxes)
    k = scene.num_classes + 1
    if n == 0:
        return [], []
    b = boxes_to_array(boxes)
    # fixed draw layout per call keeps streams aligned whatever the parameters
    eps = rng.standard_normal((n, 4))
    u = rng.random(n)
    eta = rng.standard_normal(n)
    clutter_cls = rng.integers(0, scene.num_classes, size=n)

    if scene.gt:
        idx, _ = assign_targets(b, scene.gt_array)
        g = scene.gt_array[idx]
    else:
        g = b
    wg = g[:, 2] - g[:, 0]
    hg = g[:, 3] - g[:, 1]
    noise_scale = params.tau * np.stack([wg, hg, wg, hg], axis=1)
    refined_boxes = array_to_boxes(b + params.kappa * (g - b) + eps * noise_scale)

    scores = np.zeros((n, k))
    rows = np.arange(n)
    if scene.gt:
        v = iou_rows(boxes_to_array(refined_boxes), g)
        s = np.clip(params.rho * v + (1.0 - params.rho) * u + params.score_noise * eta, 0.0, 1.0)
        scores[rows, scene.gt_classes[idx]] = s
    else:
        s = np.clip(u * CLUTTER_SCORE_CAP, 0.0, 1.0)
        scores[rows, clutter_cls] = s
    scores[:, -1] = 1.0 - s
    return refined_boxes, list(scores)


@dataclass(frozen=True)
class OracleHead:
    params: OracleParams = field(default_factory=OracleParams)

    def __call__(self, scene, boxes, rng):
        return oracle_refine(self.params, scene, boxes, rng)


class RecordedHead:
    """Replay (source box -> refined box, scores) pairs captured per image.

    ``traces`` maps image_id to a list of ``(source_box, refined_box, scores)``.
    A query matches the recorded source box with the smallest max-corner
    distance, which must be within ``tol`` pixels.
    """

    def __init__(self, traces, tol: float = 1e-3):
        self.tol = tol
        self._src = {}
        self._out = {}
        for image_id, entries in traces.items():
            self._src[image_id] = boxes_to_array(e[0] for e in entries)
            self._out[image_id] = [(e[1], np.asarray(e[2], dtype=np.float64)) for e in entries]

    def __call__(self, scene, boxes, rng):
        src = self._src.get(scene.image_id)
        if src is None or len(src) == 0:
            raise InvalidInputError(f"no recorded trace for image {scene.image_id!r}")
        out_boxes, out_scores = [], []
        for q in boxes_to_array(boxes):
            dist = np.max(np.abs(src - q), axis=1)
            j = int(np.argmin(dist))
            if dist[j] > self.tol:
                raise InvalidInputError(
                    f"image {scene.image_id!r}: no recorded box within {self.tol} px of {q.tolist()}")
            out_boxes.append(self._out[scene.image_id][j][0])
            out_scores.append(self._out[scene.image_id][j][1].copy())
        return out_boxes, out_scores
