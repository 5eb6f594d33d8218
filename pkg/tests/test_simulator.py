
import numpy as np
import pytest

from pseudobox.boxcore import Box, ScoredBox, iou, pairwise_iou
from pseudobox.correction import CorrectionConfig
from pseudobox.jitter import JitterConfig, make_rng
from pseudobox.scoring import OracleParams, Scene
from pseudobox.simulator import (DetectionNoiseSpec, ExperimentConfig, SceneError, SceneSpec, average_precision,
                                 evaluate, generate_detections, generate_scene, run_experiment)

from conftest import random_dets


def as_det(box, cls, conf, k):
    s = [0.0] * (k + 1)
    s[cls] = conf
    s[-1] = 1 - conf
    return ScoredBox(box, tuple(s))


def test_scene_zero_objects():
    scene = generate_scene(SceneSpec(min_objects=0, max_objects=0), make_rng(0))
    assert scene.gt == ()


def test_scene_overlap_policy_zero():
    spec = SceneSpec(min_objects=6, max_objects=6, max_gt_iou=0.0)
    for i in range(30):
        scene = generate_scene(spec, make_rng(i))
        m = pairwise_iou([g for g, _ in scene.gt], [g for g, _ in scene.gt])
        assert np.all(m[~np.eye(len(m), dtype=bool)] == 0)


def test_scene_unsatisfiable_policy_degrades():
    spec = SceneSpec(min_objects=20, max_objects=20, min_size=0.9, max_size=1.0, max_gt_iou=0.0)
    scene = generate_scene(spec, make_rng(0))
    assert 1 <= len(scene.gt) < 20


def test_scene_object_count_and_bounds():
    spec = SceneSpec(min_objects=5, max_objects=10)
    counts = []
    for i in range(500):
        scene = generate_scene(spec, make_rng(1, i))
        counts.append(len(scene.gt))
        for g, c in scene.gt:
            assert 0 <= g.x1 <= g.x2 <= spec.width and 0 <= g.y1 <= g.y2 <= spec.height
            assert 0 <= c < spec.num_classes
    assert 5 <= np.mean(counts) <= 10


def test_clean_detections_equal_gt():
    scene = generate_scene(SceneSpec(), make_rng(3))
    noise = DetectionNoiseSpec(loc_noise=0, misclass_rate=0, miss_rate=0, fp_rate=0)
    dets = generate_detections(scene, noise, make_rng(4), OracleParams(rho=1, score_noise=0))
    assert sorted((d.box.as_tuple(), d.label) for d in dets) == sorted((g.as_tuple(), c) for g, c in scene.gt)
    assert all(d.confidence == 1.0 for d in dets)


def test_all_missed_no_fp():
    scene = generate_scene(SceneSpec(), make_rng(3))
    assert generate_detections(scene, DetectionNoiseSpec(miss_rate=1, fp_rate=0), make_rng(4)) == []


def test_localization_noise_envelope():
    noise = DetectionNoiseSpec(loc_noise=0.1, misclass_rate=0, miss_rate=0, fp_rate=0)
    ious = []
    for i in range(1000):
        scene = generate_scene(SceneSpec(), make_rng(5, i, "scene"))
        for d in generate_detections(scene, noise, make_rng(5, i, "det")):
            ious.append(max(iou(d.box, g) for g, _ in scene.gt))
    assert 0.55 <= np.mean(ious) <= 0.9


def test_average_precision_cases():
    assert average_precision([True, False, True], 2) == pytest.approx(5 / 6)
    assert average_precision([], 3) == 0.0
    assert average_precision([True, True], 2) == 1.0
    assert average_precision([False, True], 1) == pytest.approx(0.5)


def test_evaluate_hand_case():
    a, b = Box(0, 0, 10, 10), Box(20, 20, 30, 30)
    scene = Scene("s", 100, 100, ((a, 0), (b, 0)), num_classes=1)
    preds = [as_det(a, 0, 0.9, 1), as_det(Box(50, 50, 60, 60), 0, 0.8, 1), as_det(b, 0, 0.7, 1)]
    m = evaluate(preds, scene)
    assert m.ap[0.5] == pytest.approx(5 / 6)
    assert m.precision == pytest.approx(2 / 3) and m.recall == 1.0


def test_evaluate_perfect_and_empty():
    scene = generate_scene(SceneSpec(num_classes=3), make_rng(8))
    perfect = [as_det(g, c, 0.9, 3) for g, c in scene.gt]
    m = evaluate(perfect, scene)
    assert all(v == 1.0 for v in m.ap.values())
    assert m.mean_iou == 1.0
    m = evaluate([], scene)
    assert m.recall == 0 and all(v == 0 for v in m.ap.values())


def test_evaluate_zero_gt_scene():
    scene = Scene("s", 100, 100, (), num_classes=2)
    m = evaluate(random_dets(np.random.default_rng(0), 4, num_classes=2), scene)
    assert m.ap is None and m.n_pred == 4 and m.precision == 0


def test_ap_non_increasing_in_threshold(rng):
    for i in range(30):
        scene = generate_scene(SceneSpec(), make_rng(9, i))
        dets = generate_detections(scene, DetectionNoiseSpec(), make_rng(10, i))
        ap = evaluate(dets, scene).ap
        vals = [ap[t] for t in sorted(ap)]
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


def small(**kw):
    base = dict(scenes=12, seed=3, scene=SceneSpec(max_objects=4), student_steps=5)
    base.update(kw)
    return ExperimentConfig(**base)


def test_identity_head_without_correction_matches_baseline():
    corr = CorrectionConfig(n_r=0, jitter=JitterConfig(10, 0.0))
    rep = run_experiment(small(scenes=1, head="identity", correction=corr))
    arms = rep.rows[0]["arms"]
    assert arms["corrected"] == arms["uncorrected"]
    assert rep.rows[0]["iou_gain"] == 0.0


def test_report_reproducible():
    cfg = small(ablation=True)
    assert run_experiment(cfg).to_dict() == run_experiment(cfg).to_dict()


def test_report_invariant_to_workers():
    cfg = small()
    assert run_experiment(cfg, workers=1).to_dict() == run_experiment(cfg, workers=3).to_dict()


def test_empty_experiment():
    rep = run_experiment(small(scenes=0))
    row = rep.rows[0]
    assert row["arms"]["corrected"]["n_scenes"] == 0 and row["iou_gain"] is None


def test_sweep_rows():
    rep = run_experiment(small(scenes=4, sweep_axis="n_r", sweep_values=(0, 1, 3)))
    assert [r["sweep_value"] for r in rep.rows] == [0, 1, 3]
    assert [len(r["stability"]) for r in rep.rows] == [0, 1, 3]


def test_scene_failure_reports_replay_seed(monkeypatch):
    import pseudobox.simulator as sim

    def boom(*a, **k):
        raise ValueError("broken head")

    monkeypatch.setattr(sim, "correct", boom)
    with pytest.raises(SceneError) as err:
        run_experiment(small(scenes=2, seed=77))
    assert err.value.seed == 77 and err.value.image_id == "scene_00000"


def test_ablation_arms_present():
    rep = run_experiment(small(ablation=True))
    assert set(rep.rows[0]["arms"]) == {"uncorrected", "corrected", "refine_only", "vote_only"}
    assert set(rep.rows[0]["student_iou"]) == {"soft", "hard", "hard_iou", "hard_inv_iou"}
