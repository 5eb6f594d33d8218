"""Line-delimited JSON detection exchange format, one image per line::

    {"image_id": "img_0", "width": 640, "height": 480,
     "gt": [{"box": [x1, y1, x2, y2], "class": 0}],
     "detections": [{"box": [...], "scores": [C+1 floats]}]}

Detections may also carry ``"label"`` (a pinned class) and ``"source_box"``
(the query box a recorded head refined into ``box``). A line holding only a
``"meta"`` object is a header and is skipped by the reader. Floats are written
with 9 significant digits.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .boxcore import Box, ScoredBox
from .errors import InvalidInputError

SIG_DIGITS = 9


def fmt_float(x: float) -> float:
    return float(f"{x:.{SIG_DIGITS}g}")


def rounded(obj):
    """Recursively round floats to 9 significant digits for stable output."""
    if isinstance(obj, float):
        return fmt_float(obj) if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    return obj


def dumps(obj, **kw) -> str:
    return json.dumps(rounded(obj), allow_nan=False, **kw)


@dataclass
class ImageRecord:
    image_id: str
    width: float
    height: float
    gt: list[tuple[Box, int]] | None = None
    detections: list[ScoredBox] = field(default_factory=list)
    sources: list[Box] | None = None

    @property
    def num_classes(self) -> int | None:
        if self.detections:
            return self.detections[0].num_classes
        if self.gt:
            return max(c for _, c in self.gt) + 1
        return None

    def to_json(self, pin_labels: bool = False) -> dict:
        rec = {"image_id": self.image_id, "width": self.width, "height": self.height}
        if self.gt is not None:
            rec["gt"] = [{"box": list(b.as_tuple()), "class": c} for b, c in self.gt]
        dets = []
        for i, d in enumerate(self.detections):
            entry = {"box": list(d.box.as_tuple()), "scores": list(d.scores)}
            if pin_labels:
                entry["label"] = d.label
            if self.sources is not None:
                entry["source_box"] = list(self.sources[i].as_tuple())
            dets.append(entry)
        rec["detections"] = dets
        return rec


def _box(value, what):
    if not isinstance(value, list) or len(value) != 4:
        raise InvalidInputError(f"{what} must be a list of 4 numbers")
    try:
        return Box.from_seq([float(v) for v in value])
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{what}: {exc}") from exc


def parse_record(obj) -> ImageRecord:
    if not isinstance(obj, dict):
        raise InvalidInputError("record must be a JSON object")
    try:
        image_id = str(obj["image_id"])
        width = float(obj["width"])
        height = float(obj["height"])
    except KeyError as exc:
        raise InvalidInputError(f"missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"bad image size: {exc}") from exc
    if not (width > 0 and height > 0 and math.isfinite(width) and math.isfinite(height)):
        raise InvalidInputError("width and height must be positive")
    gt = None
    if "gt" in obj:
        gt = []
        for g in obj["gt"]:
            cls = g.get("class")
            if not isinstance(cls, int) or cls < 0:
                raise InvalidInputError(f"gt class must be a non-negative integer, got {cls!r}")
            gt.append((_box(g.get("box"), "gt box"), cls))
    dets, sources = [], []
    for d in obj.get("detections", []):
        scores = d.get("scores")
        if not isinstance(scores, list):
            raise InvalidInputError("detection scores must be a list")
        try:
            scores = [float(s) for s in scores]
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(f"detection scores: {exc}") from exc
        label = d.get("label", -1)
        if not isinstance(label, int):
            raise InvalidInputError(f"detection label must be an integer, got {label!r}")
        dets.append(ScoredBox(_box(d.get("box"), "detection box"), tuple(scores), label=label))
        if "source_box" in d:
            sources.append(_box(d["source_box"], "source_box"))
    if dets and len({d.num_classes for d in dets}) != 1:
        raise InvalidInputError("all detections of an image need equally long score vectors")
    if sources and len(sources) != len(dets):
        raise InvalidInputError("source_box must be given for all detections or none")
    return ImageRecord(image_id, width, height, gt, dets, sources or None)


def read_exchange(path) -> list[ImageRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if isinstance(obj, dict) and set(obj) == {"meta"}:
                    continue
                records.append(parse_record(obj))
            except (json.JSONDecodeError, InvalidInputError, AttributeError) as exc:
                err = InvalidInputError(f"{path}:{lineno}: {exc}")
                err.lineno = lineno
                raise err from exc
    return records


def write_exchange(path, records, meta: dict | None = None, pin_labels: bool = False) -> None:
    lines = []
    if meta is not None:
        lines.append(dumps({"meta": meta}, sort_keys=True))
    lines.extend(dumps(r.to_json(pin_labels)) for r in records)
    Path(path).write_text("".join(line + "\n" for line in lines))
