"""Desk-scale experiments: synthetic scenes, noisy detections, paired correction arms.

Every scene draws from its own generator stream keyed by ``(seed, image_id,
purpose)``, so arms that differ only in correction settings see identical
scenes and detections, and the scene loop can be split across processes
without changing any number in the report.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .boxcore import Box, ScoredBox, array_to_boxes, boxes_to_array, greedy_match, iou_arrays, iou_rows, nms, pairwise_iou
from .correction import CorrectionConfig, PseudoLabelSet, correct, stability_metrics
from .errors import InvalidConfigError, PseudoboxError
from .jitter import JitterConfig, jitter_box, make_rng
from .loss import ABLATION_VARIANTS, RegWeightMode, reg_weight, regression_targets
from .scoring import CLUTTER_SCORE_CAP, IdentityHead, OracleHead, OracleParams, Scene, assign_targets

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
SWEEP_AXES = ("sigma_j", "lambda", "n_r", "n_j", "rho")
AP_NOTE = ("AP is the all-points interpolated area under the precision-recall staircase, "
           "averaged over classes present in each scene's GT, then over scenes with GT.")


class SceneError(PseudoboxError):
    def __init__(self, image_id, seed, cause):
        super().__init__(f"scene {image_id!r} failed (replay with seed={seed}): {cause!r}")
        self.image_id = image_id
        self.seed = seed


@dataclass(frozen=True)
class SceneSpec:
    width: float = 640.0
    height: float = 480.0
    min_objects: int = 2
    max_objects: int = 8
    min_size: float = 0.1
    max_size: float = 0.35
    num_classes: int = 5
    max_gt_iou: float = 0.2

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise InvalidConfigError("image size must be positive", key="scene.width")
        if not 0 <= self.min_objects <= self.max_objects:
            raise InvalidConfigError("need 0 <= min_objects <= max_objects", key="scene.min_objects")
        if not 0 < self.min_size <= self.max_size <= 1:
            raise InvalidConfigError("need 0 < min_size <= max_size <= 1", key="scene.min_size")
        if self.num_classes < 1:
            raise InvalidConfigError("num_classes must be >= 1", key="scene.num_classes")
        if not 0 <= self.max_gt_iou <= 1:
            raise InvalidConfigError("max_gt_iou must be in [0, 1]", key="scene.max_gt_iou")


@dataclass(frozen=True)
class DetectionNoiseSpec:
    loc_noise: float = 0.1
    misclass_rate: float = 0.05
    miss_rate: float = 0.1
    fp_rate: float = 1.0

    def __post_init__(self):
        if not self.loc_noise >= 0:
            raise InvalidConfigError("loc_noise must be >= 0", key="noise.loc_noise")
        for name in ("misclass_rate", "miss_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise InvalidConfigError(f"{name} must be in [0, 1]", key=f"noise.{name}")
        if not self.fp_rate >= 0:
            raise InvalidConfigError("fp_rate must be >= 0", key="noise.fp_rate")


MAX_PLACEMENT_ATTEMPTS = 1000


def generate_scene(spec: SceneSpec, rng: np.random.Generator, image_id: str = "scene") -> Scene:
    count = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    placed: list[np.ndarray] = []
    classes = []
    for _ in range(count):
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            w = rng.uniform(spec.min_size, spec.max_size) * spec.width
            h = rng.uniform(spec.min_size, spec.max_size) * spec.height
            x1 = rng.uniform(0, spec.width - w)
            y1 = rng.uniform(0, spec.height - h)
            cand = np.array([x1, y1, x1 + w, y1 + h])
            if not placed or iou_arrays(cand, np.array(placed)).max() <= spec.max_gt_iou:
                break
        else:
            break
        placed.append(cand)
        classes.append(int(rng.integers(spec.num_classes)))
    gt = tuple(zip(array_to_boxes(np.array(placed)), classes))
    return Scene(image_id, spec.width, spec.height, gt, spec.num_classes)


def _score_vector(s: float, cls: int, k: int) -> tuple[float, ...]:
    v = [0.0] * k
    v[cls] = s
    v[-1] = 1.0 - s
    return tuple(v)


def generate_detections(scene: Scene, noise: DetectionNoiseSpec, rng: np.random.Generator,
                        score: OracleParams = OracleParams(), nms_iou: float = 0.5) -> list[ScoredBox]:
    """Noisy detector output for a scene: misses, jitter, class flips, clutter, then NMS."""
    k = scene.num_classes + 1
    dets = []
    for g, c in scene.gt:
        miss, flip, u = rng.random(3)
        eps = rng.standard_normal(4)
        eta = rng.standard_normal()
        new_cls = int(rng.integers(scene.num_classes - 1)) if scene.num_classes > 1 else 0
        if miss < noise.miss_rate:
            continue
        garr = np.array(g.as_tuple())
        scale = noise.loc_noise * np.array([g.width, g.height, g.width, g.height])
        box = array_to_boxes(garr + eps * scale)[0]
        v = iou_rows(np.array(box.as_tuple()), garr)[0]
        s = min(max(score.rho * v + (1 - score.rho) * u + score.score_noise * eta, 0.0), 1.0)
        if scene.num_classes > 1 and flip < noise.misclass_rate:
            c = new_cls if new_cls < c else new_cls + 1
        dets.append(ScoredBox(box, _score_vector(s, c, k)))
    n_fp = int(rng.poisson(noise.fp_rate))
    for _ in range(n_fp):
        w = rng.uniform(0.05, 0.3) * scene.width
        h = rng.uniform(0.05, 0.3) * scene.height
        x1 = rng.uniform(0, scene.width - w)
        y1 = rng.uniform(0, scene.height - h)
        s = CLUTTER_SCORE_CAP * rng.random()
        c = int(rng.integers(scene.num_classes))
        dets.append(ScoredBox(Box(x1, y1, x1 + w, y1 + h), _score_vector(s, c, k)))
    return nms(dets, nms_iou)


def average_precision(tp: Sequence[bool], n_gt: int) -> float:
    """All-points interpolated AP for predictions already sorted by confidence."""
    if n_gt == 0:
        return float("nan")
    if len(tp) == 0:
        return 0.0
    tp = np.asarray(tp, dtype=np.float64)
    ctp = np.cumsum(tp)
    recall = np.concatenate([[0.0], ctp / n_gt, [1.0]])
    precision = np.concatenate([[1.0], ctp / np.arange(1, len(tp) + 1), [0.0]])
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.where(recall[1:] != recall[:-1])[0]
    return float(np.sum((recall[steps + 1] - recall[steps]) * precision[steps + 1]))


@dataclass
class SceneMetrics:
    n_pred: int
    n_gt: int
    ap: dict[float, float] | None
    tp50: int
    iou_sum: float
    iou_count: int
    iou_by_class: dict[int, tuple[float, int]]
    scores: list[float]
    best_iou: list[float]

    @property
    def mean_iou(self) -> float:
        return self.iou_sum / self.iou_count if self.iou_count else 0.0

    @property
    def precision(self) -> float:
        return self.tp50 / self.n_pred if self.n_pred else 0.0

    @property
    def recall(self) -> float:
        return self.tp50 / self.n_gt if self.n_gt else 0.0


def evaluate(pseudo: PseudoLabelSet | Sequence[ScoredBox], scene: Scene,
             thresholds: Sequence[float] = IOU_THRESHOLDS) -> SceneMetrics:
    preds = list(pseudo.labels if isinstance(pseudo, PseudoLabelSet) else pseudo)
    gt = list(scene.gt)
    gt_boxes = [g for g, _ in gt]
    overlaps = pairwise_iou([d.box for d in preds], gt_boxes)
    gt_cls = np.array([c for _, c in gt], dtype=np.int64)
    order = sorted(range(len(preds)), key=lambda i: -preds[i].confidence)

    best = []
    for i, d in enumerate(preds):
        same = overlaps[i, gt_cls == d.label] if gt else np.zeros(0)
        best.append(float(same.max()) if same.size else 0.0)

    ap = None
    if gt:
        ap = {}
        present = sorted(set(gt_cls.tolist()))
        for t in thresholds:
            matched = dict(greedy_match(preds, gt, t))
            per_class = []
            for c in present:
                flags = [matched[i] is not None for i in order if preds[i].label == c]
                per_class.append(average_precision(flags, int(np.sum(gt_cls == c))))
            ap[t] = float(np.mean(per_class))

    matches50 = greedy_match(preds, gt, 0.5)
    iou_sum, iou_count, tp50 = 0.0, 0, 0
    by_class: dict[int, tuple[float, int]] = {}
    for i, j in matches50:
        if j is None:
            continue
        v = float(overlaps[i, j])
        tp50 += 1
        iou_sum += v
        iou_count += 1
        s, n = by_class.get(preds[i].label, (0.0, 0))
        by_class[preds[i].label] = (s + v, n + 1)
    return SceneMetrics(len(preds), len(gt), ap, tp50, iou_sum, iou_count, by_class,
                        [d.confidence for d in preds], best)


# ---------------------------------------------------------------------------
# experiment runner


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneSpec = field(default_factory=SceneSpec)
    noise: DetectionNoiseSpec = field(default_factory=DetectionNoiseSpec)
    oracle: OracleParams = field(default_factory=OracleParams)
    correction: CorrectionConfig = field(default_factory=CorrectionConfig)
    reg: RegWeightMode = field(default_factory=RegWeightMode)
    scenes: int = 200
    seed: int = 0
    head: str = "oracle"
    ablation: bool = False
    student_steps: int = 20
    sweep_axis: str | None = None
    sweep_values: tuple = ()

    def __post_init__(self):
        if self.scenes < 0:
            raise InvalidConfigError("scene count must be >= 0", key="run.scenes")
        if self.head not in ("oracle", "identity"):
            raise InvalidConfigError(f"simulation head must be 'oracle' or 'identity', got {self.head!r}",
                                     key="run.head")
        if self.sweep_axis is not None and self.sweep_axis not in SWEEP_AXES:
            raise InvalidConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {self.sweep_axis!r}",
                                     key="run.sweep_axis")
        if self.sweep_axis is not None and not self.sweep_values:
            raise InvalidConfigError("sweep axis given without values", key="run.sweep_values")


def with_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    rep = dataclasses.replace
    corr = cfg.correction
    if axis == "sigma_j":
        return rep(cfg, correction=rep(corr, jitter=rep(corr.jitter, sigma_j=float(value))))
    if axis == "n_j":
        return rep(cfg, correction=rep(corr, jitter=rep(corr.jitter, n_j=int(value))))
    if axis == "n_r":
        return rep(cfg, correction=rep(corr, n_r=int(value)))
    if axis == "lambda":
        return rep(cfg, reg=RegWeightMode("inverse-iou", float(value)))
    if axis == "rho":
        return rep(cfg, oracle=rep(cfg.oracle, rho=float(value)))
    raise InvalidConfigError(f"unknown sweep axis {axis!r}", key="run.sweep_axis")


def arm_configs(cfg: ExperimentConfig) -> dict[str, CorrectionConfig]:
    rep = dataclasses.replace
    arms = {"uncorrected": rep(cfg.correction, n_r=0, vote=False), "corrected": cfg.correction}
    if cfg.ablation:
        arms["refine_only"] = rep(cfg.correction, vote=False)
        arms["vote_only"] = rep(cfg.correction, n_r=0)
    return arms


def _make_head(cfg: ExperimentConfig):
    return OracleHead(cfg.oracle) if cfg.head == "oracle" else IdentityHead()


STUDENT_PROPOSALS = 4
STUDENT_SIGMA = 0.1
STUDENT_STEP_PX = 0.5


def student_fit(head, scene: Scene, pseudo: PseudoLabelSet, reg: RegWeightMode, steps: int,
                rng: np.random.Generator) -> dict[str, tuple[float, int]]:
    """Fit student boxes to pseudo-label targets by sub-gradient descent on the
    weighted L1 regression loss, once per loss variant.

    Returns ``variant -> (sum of final IoU to GT, number of student boxes)``.
    """
    out = {name: (0.0, 0) for name in ABLATION_VARIANTS}
    if not pseudo.labels or not scene.gt:
        return out
    targets = [d.box for d in pseudo.labels]
    gt_idx, _ = assign_targets(boxes_to_array(targets), scene.gt_array)
    proposals, hard, gt_rows = [], [], []
    jit = JitterConfig(STUDENT_PROPOSALS, STUDENT_SIGMA)
    for t, j in zip(targets, gt_idx):
        props = jitter_box(t, jit, rng)
        proposals.extend(props)
        hard.extend([t] * len(props))
        gt_rows.extend([j] * len(props))
    soft, _ = head(scene, proposals, rng)
    gt = scene.gt_array[np.array(gt_rows)]
    start = boxes_to_array(proposals)
    for name, (label_mode, weight_kind) in ABLATION_VARIANTS.items():
        mode = RegWeightMode(weight_kind, reg.lam)
        target = boxes_to_array(regression_targets(label_mode, hard, soft))
        s = start.copy()
        for _ in range(steps):
            w = np.array([reg_weight(v, mode) for v in iou_rows(target, s)])
            grad = w[:, None] * np.sign(s - target) / 4.0
            s = s - 4.0 * STUDENT_STEP_PX * grad
        s = np.concatenate([np.minimum(s[:, :2], s[:, 2:]), np.maximum(s[:, :2], s[:, 2:])], axis=1)
        out[name] = (float(np.sum(iou_rows(s, gt))), len(s))
    return out


def run_scene(cfg: ExperimentConfig, index: int) -> dict:
    image_id = f"scene_{index:05d}"
    try:
        scene = generate_scene(cfg.scene, make_rng(cfg.seed, image_id, "scene"), image_id)
        dets = generate_detections(scene, cfg.noise, make_rng(cfg.seed, image_id, "detections"),
                                   cfg.oracle, cfg.correction.nms_iou)
        head = _make_head(cfg)
        result = {"image_id": image_id, "arms": {}, "stability": []}
        for name, arm_cfg in arm_configs(cfg).items():
            # identical correction stream in every arm
            pseudo = correct(head, scene, dets, arm_cfg, make_rng(cfg.seed, image_id, "correction"))
            result["arms"][name] = (evaluate(pseudo, scene), pseudo.below_threshold)
            if name == "corrected":
                result["stability"] = stability_metrics(pseudo.history)
                result["student"] = student_fit(head, scene, pseudo, cfg.reg, cfg.student_steps,
                                                make_rng(cfg.seed, image_id, "student"))
        return result
    except PseudoboxError as exc:
        if isinstance(exc, SceneError):
            raise
        raise SceneError(image_id, cfg.seed, exc) from exc
    except (ArithmeticError, ValueError, IndexError) as exc:
        raise SceneError(image_id, cfg.seed, exc) from exc


def _run_scene_star(args):
    return run_scene(*args)


def _pearson(x: list[float], y: list[float]) -> float | None:
    if len(x) < 2:
        return None
    x = np.asarray(x)
    y = np.asarray(y)
    if np.std(x) == 0 or np.std(y) == 0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def _mean_std(values: list[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    arr = np.asarray(values)
    return float(arr.mean()), float(arr.std())


def aggregate_arm(results: list[tuple[SceneMetrics, int]]) -> dict:
    n_pred = sum(m.n_pred for m, _ in results)
    n_gt = sum(m.n_gt for m, _ in results)
    tp = sum(m.tp50 for m, _ in results)
    iou_sum = math.fsum(m.iou_sum for m, _ in results)
    iou_count = sum(m.iou_count for m, _ in results)
    with_gt = [m for m, _ in results if m.ap is not None]
    row = {
        "n_scenes": len(results),
        "n_pseudo": n_pred,
        "n_gt": n_gt,
        "mean_iou": iou_sum / iou_count if iou_count else None,
        "ap50": float(np.mean([m.ap[0.5] for m in with_gt])) if with_gt else None,
        "ap75": float(np.mean([m.ap[0.75] for m in with_gt])) if with_gt else None,
        "ap": float(np.mean([np.mean(list(m.ap.values())) for m in with_gt])) if with_gt else None,
        "precision": tp / n_pred if n_pred else None,
        "recall": tp / n_gt if n_gt else None,
        "score_iou_corr": _pearson([s for m, _ in results for s in m.scores],
                                   [v for m, _ in results for v in m.best_iou]),
        "ap_excluded_scenes": len(results) - len(with_gt),
        "below_threshold": sum(b for _, b in results),
    }
    per_class: dict[int, list] = {}
    for m, _ in results:
        for c, (s, n) in m.iou_by_class.items():
            acc = per_class.setdefault(c, [0.0, 0])
            acc[0] += s
            acc[1] += n
    row["mean_iou_per_class"] = {str(c): per_class[c][0] / per_class[c][1] for c in sorted(per_class)}
    return row


def summarize(cfg: ExperimentConfig, scene_results: list[dict]) -> dict:
    arms = {name: aggregate_arm([r["arms"][name] for r in scene_results]) for name in arm_configs(cfg)}
    stability = []
    for r in range(cfg.correction.n_r):
        d_cls = [s[r][0] for res in scene_results if len(s := res["stability"]) > r]
        d_loc = [s[r][1] for res in scene_results if len(s := res["stability"]) > r]
        (cm, cs), (lm, ls) = _mean_std(d_cls), _mean_std(d_loc)
        stability.append({"round": r + 1, "d_cls_mean": cm, "d_cls_std": cs, "d_loc_mean": lm, "d_loc_std": ls})
    student = {}
    for name in ABLATION_VARIANTS:
        total = math.fsum(res.get("student", {}).get(name, (0.0, 0))[0] for res in scene_results)
        count = sum(res.get("student", {}).get(name, (0.0, 0))[1] for res in scene_results)
        student[name] = total / count if count else None
    before, after = arms["uncorrected"]["mean_iou"], arms["corrected"]["mean_iou"]
    return {
        "arms": arms,
        "iou_gain": after - before if before is not None and after is not None else None,
        "stability": stability,
        "student_iou": student,
    }


@dataclass
class ExperimentReport:
    header: dict
    config: dict
    seed: int
    rows: list[dict]

    def to_dict(self) -> dict:
        return {"header": self.header, "config": self.config, "seed": self.seed, "rows": self.rows}


def config_echo(cfg: ExperimentConfig) -> dict:
    flat = {}

    def walk(prefix, obj):
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            key = f"{prefix}{f.name}"
            if dataclasses.is_dataclass(v):
                walk(key + ".", v)
            else:
                flat[key] = list(v) if isinstance(v, tuple) else v

    walk("", cfg)
    return flat


def run_experiment(cfg: ExperimentConfig, workers: int = 1, echo: dict | None = None) -> ExperimentReport:
    if cfg.sweep_axis is None:
        points = [(None, None, cfg)]
    else:
        points = [(cfg.sweep_axis, v, with_axis(cfg, cfg.sweep_axis, v)) for v in cfg.sweep_values]
    rows = []
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 and cfg.scenes > 1 else None
    try:
        for axis, value, point in points:
            jobs = [(point, i) for i in range(point.scenes)]
            if pool is None:
                results = [_run_scene_star(j) for j in jobs]
            else:
                # map preserves submission order, so aggregation order is fixed
                results = list(pool.map(_run_scene_star, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
            row = {"sweep_axis": axis, "sweep_value": value}
            row.update(summarize(point, results))
            rows.append(row)
    finally:
        if pool is not None:
            pool.shutdown()
    header = {"schema": "pseudobox.experiment/1", "ap_method": AP_NOTE,
              "iou_thresholds": list(IOU_THRESHOLDS), "arms": list(arm_configs(cfg))}
    return ExperimentReport(header, echo if echo is not None else config_echo(cfg), cfg.seed, rows)
