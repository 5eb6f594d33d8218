import numpy as np
import pytest
from hypothesis import strategies as st

from pseudobox.boxcore import Box, ScoredBox, iou


def random_boxes(rng, n, extent=100.0, max_size=40.0):
    xy = rng.uniform(0, extent, size=(n, 2))
    wh = rng.uniform(0.5, max_size, size=(n, 2))
    return [Box(x, y, x + w, y + h) for (x, y), (w, h) in zip(xy, wh)]


def random_dets(rng, n, num_classes=1, extent=100.0):
    boxes = random_boxes(rng, n, extent)
    out = []
    for b in boxes:
        s = float(rng.uniform(0.05, 0.95))
        # coarse scores so that confidence ties actually occur
        s = round(s, 1) if rng.random() < 0.3 else s
        scores = [0.0] * (num_classes + 1)
        scores[int(rng.integers(num_classes))] = s
        scores[-1] = 1.0 - s
        out.append(ScoredBox(b, tuple(scores)))
    return out


def reference_nms(dets, thr):
    """Textbook quadratic NMS: repeatedly take the best remaining box and drop
    everything of its class that overlaps it by more than ``thr``."""
    remaining = list(range(len(dets)))
    keep = []
    while remaining:
        best = remaining[0]
        for i in remaining[1:]:
            if dets[i].confidence > dets[best].confidence:
                best = i
        keep.append(best)
        remaining = [i for i in remaining if i != best and not (
            dets[i].label == dets[best].label and iou(dets[i].box, dets[best].box) > thr)]
    return [dets[i] for i in keep]


def reference_greedy_match(pred, gt, thr):
    order = sorted(range(len(pred)), key=lambda i: (-pred[i].confidence, i))
    claimed = set()
    result = {}
    for i in order:
        best_j, best_v = None, -1.0
        for j, (g, c) in enumerate(gt):
            if j in claimed or c != pred[i].label:
                continue
            v = iou(pred[i].box, g)
            if v >= thr and v > best_v:
                best_j, best_v = j, v
        if best_j is not None:
            claimed.add(best_j)
        result[i] = best_j
    return [(i, result[i]) for i in range(len(pred))]


def central_difference(f, x, h=1e-6):
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        grad.flat[k] = (f(x + e) - f(x - e)) / (2 * h)
    return grad


coords = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)


@st.composite
def boxes(draw):
    x1, x2 = sorted((draw(coords), draw(coords)))
    y1, y2 = sorted((draw(coords), draw(coords)))
    return Box(x1, y1, x2, y2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
