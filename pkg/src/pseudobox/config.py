"""Run configuration: flat ``section.key = value`` files, flag overrides, defaults.

Precedence, lowest to highest: built-in defaults, ``PSEUDOBOX_SEED`` (seed
only), config file, command-line flags. Unknown keys are rejected. A bare leaf
name (``sigma_j``) is accepted when it identifies exactly one key.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .correction import CorrectionConfig
from .errors import InvalidConfigError
from .jitter import JitterConfig
from .loss import RegWeightMode
from .scoring import OracleParams
from .simulator import DetectionNoiseSpec, ExperimentConfig, SceneSpec

SEED_ENV = "PSEUDOBOX_SEED"


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_str(text):
    text = str(text).strip()
    return None if text.lower() in ("", "none", "null") else text


def _floats(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    text = str(text).strip().strip("[]")
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


# key -> (parser, default). Method defaults: threshold 0.7, n_j 10,
# sigma_j 0.06, n_r 2, lambda 5. alpha and ema_momentum are only starting points.
SCHEMA: dict[str, tuple[Callable[[Any], Any], Any]] = {
    "scene.width": (float, 640.0),
    "scene.height": (float, 480.0),
    "scene.min_objects": (_int, 2),
    "scene.max_objects": (_int, 8),
    "scene.min_size": (float, 0.1),
    "scene.max_size": (float, 0.35),
    "scene.num_classes": (_int, 5),
    "scene.max_gt_iou": (float, 0.2),
    "noise.loc_noise": (float, 0.1),
    "noise.misclass_rate": (float, 0.05),
    "noise.miss_rate": (float, 0.1),
    "noise.fp_rate": (float, 1.0),
    "oracle.kappa": (float, 0.3),
    "oracle.tau": (float, 0.02),
    "oracle.rho": (float, 0.9),
    "oracle.score_noise": (float, 0.02),
    "correction.n_r": (_int, 2),
    "correction.score_threshold": (float, 0.7),
    "correction.nms_iou": (float, 0.5),
    "correction.vote": (_bool, True),
    "correction.include_unjittered": (_bool, False),
    "jitter.n_j": (_int, 10),
    "jitter.sigma_j": (float, 0.06),
    "jitter.mode": (str, "relative"),
    "loss.weight_mode": (str, "inverse-iou"),
    "loss.lambda": (float, 5.0),
    "loss.alpha": (float, 1.0),
    "loss.ema_momentum": (float, 0.999),
    "run.scenes": (_int, 200),
    "run.seed": (_int, 0),
    "run.head": (str, "oracle"),
    "run.ablation": (_bool, False),
    "run.student_steps": (_int, 20),
    "run.sweep_axis": (_opt_str, None),
    "run.sweep_values": (_floats, ()),
    "run.trace": (_opt_str, None),
    "run.out": (str, "out"),
    "run.format": (str, "json"),
    "run.workers": (_int, 1),
}

# Not echoed into reports: they change where/how output is written, not what.
NON_ECHO_KEYS = ("run.out", "run.format", "run.workers", "run.trace")

DEFAULT_SWEEPS = {
    "lambda": (1.0, 3.0, 5.0, 7.0),
    "sigma_j": (0.03, 0.06, 0.1, 0.15, 0.30),
    "n_r": (0, 1, 2, 3, 4),
    "n_j": (1, 5, 10, 20),
    "rho": (0.0, 0.5, 0.9, 1.0),
}


def resolve_key(key: str) -> str:
    key = key.strip()
    if key in SCHEMA:
        return key
    matches = [k for k in SCHEMA if k.rsplit(".", 1)[1] == key]
    if len(matches) == 1:
        return matches[0]
    if matches:
        raise InvalidConfigError(f"ambiguous config key {key!r}: one of {matches}", key=key)
    raise InvalidConfigError(f"unknown config key {key!r}", key=key)


def read_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise InvalidConfigError(f"config file not found: {path}", key="--config")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[resolve_key(key)] = value
    return out


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})

    def __getitem__(self, key):
        return self.values[resolve_key(key)]

    def echo(self) -> dict[str, Any]:
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in self.values.items() if k not in NON_ECHO_KEYS}

    @property
    def seed(self) -> int:
        return self.values["run.seed"]

    def jitter(self) -> JitterConfig:
        v = self.values
        return JitterConfig(v["jitter.n_j"], v["jitter.sigma_j"], v["jitter.mode"])

    def correction(self) -> CorrectionConfig:
        v = self.values
        return CorrectionConfig(v["correction.n_r"], self.jitter(), v["correction.score_threshold"],
                                v["correction.nms_iou"], v["correction.vote"], v["correction.include_unjittered"])

    def oracle(self) -> OracleParams:
        v = self.values
        return OracleParams(v["oracle.kappa"], v["oracle.tau"], v["oracle.rho"], v["oracle.score_noise"])

    def reg(self) -> RegWeightMode:
        return RegWeightMode(self.values["loss.weight_mode"], self.values["loss.lambda"])

    def experiment(self) -> ExperimentConfig:
        v = self.values
        scene = SceneSpec(v["scene.width"], v["scene.height"], v["scene.min_objects"], v["scene.max_objects"],
                          v["scene.min_size"], v["scene.max_size"], v["scene.num_classes"], v["scene.max_gt_iou"])
        noise = DetectionNoiseSpec(v["noise.loc_noise"], v["noise.misclass_rate"], v["noise.miss_rate"],
                                   v["noise.fp_rate"])
        axis = v["run.sweep_axis"]
        values = v["run.sweep_values"]
        if axis is not None and not values:
            values = DEFAULT_SWEEPS.get(axis, ())
        return ExperimentConfig(scene, noise, self.oracle(), self.correction(), self.reg(), v["run.scenes"],
                                v["run.seed"], v["run.head"], v["run.ablation"], v["run.student_steps"],
                                axis, tuple(values))

    def validate(self):
        """Build every section once so range errors surface with their key."""
        v = self.values
        if not v["loss.alpha"] >= 0:
            raise InvalidConfigError("alpha must be >= 0", key="loss.alpha")
        if not 0 <= v["loss.ema_momentum"] <= 1:
            raise InvalidConfigError("ema_momentum must be in [0, 1]", key="loss.ema_momentum")
        if v["run.format"] not in ("json", "csv"):
            raise InvalidConfigError("format must be json or csv", key="run.format")
        if v["run.workers"] < 1:
            raise InvalidConfigError("workers must be >= 1", key="run.workers")
        if v["run.head"] not in ("oracle", "identity", "recorded"):
            raise InvalidConfigError("head must be oracle, identity or recorded", key="run.head")
        if v["run.head"] != "recorded":
            self.experiment()
        else:
            self.correction()
            self.reg()
        return self


def _coerce(key: str, value):
    parser = SCHEMA[key][0]
    try:
        return parser(value)
    except (TypeError, ValueError) as exc:
        raise InvalidConfigError(f"bad value for {key}: {value!r} ({exc})", key=key) from exc


def parse_config(path=None, overrides: dict[str, Any] | None = None, env=None) -> RunConfig:
    env = os.environ if env is None else env
    cfg = RunConfig()
    if env.get(SEED_ENV, "").strip():
        cfg.values["run.seed"] = _coerce("run.seed", env[SEED_ENV])
    if path is not None:
        for key, value in read_config_file(path).items():
            cfg.values[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        key = resolve_key(key)
        cfg.values[key] = _coerce(key, value)
    return cfg.validate()
