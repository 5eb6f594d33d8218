"""Regenerate the 10-image exchange fixture and its pinned golden correction output.

    python scripts/make_fixture.py            # writes tests/data/
"""

import argparse
import shutil
import tempfile
from pathlib import Path

from pseudobox.cli import main as cli_main
from pseudobox.exchange import ImageRecord, write_exchange
from pseudobox.jitter import make_rng
from pseudobox.simulator import DetectionNoiseSpec, SceneSpec, generate_detections, generate_scene

FIXTURE_SEED = 2023


def build_fixture(n_images=10):
    spec = SceneSpec(num_classes=3)
    records = []
    for i in range(n_images):
        image_id = f"img_{i:03d}"
        scene = generate_scene(spec, make_rng(FIXTURE_SEED, image_id, "scene"), image_id)
        dets = generate_detections(scene, DetectionNoiseSpec(), make_rng(FIXTURE_SEED, image_id, "detections"))
        records.append(ImageRecord(image_id, scene.width, scene.height, list(scene.gt), dets))
    return records


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dest", default=str(Path(__file__).resolve().parents[1] / "tests" / "data"))
    args = ap.parse_args()
    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)
    fixture = dest / "fixture_10.jsonl"
    write_exchange(fixture, build_fixture())
    with tempfile.TemporaryDirectory() as tmp:
        code = cli_main(["correct", str(fixture), "--seed", "42", "--out", tmp])
        if code != 0:
            raise SystemExit(code)
        shutil.copy(Path(tmp) / "corrected.jsonl", dest / "golden_corrected_seed42.jsonl")
    print(f"wrote {fixture} and golden output")


if __name__ == "__main__":
    main()
