"""Box jitter: sample perturbed copies of a box around itself."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .boxcore import Box, array_to_boxes
from .errors import InvalidConfigError

JITTER_MODES = ("relative", "literal")


@dataclass(frozen=True)
class JitterConfig:
    """``mode='relative'`` scales offsets by box width/height; ``'literal'`` multiplies
    raw corner coordinates by ``1 + xi``.
    """

    n_j: int = 10
    sigma_j: float = 0.06
    mode: str = "relative"

    def __post_init__(self):
        if int(self.n_j) != self.n_j or self.n_j < 1:
            raise InvalidConfigError(f"n_j must be a positive integer, got {self.n_j}", key="jitter.n_j")
        if not self.sigma_j >= 0:
            raise InvalidConfigError(f"sigma_j must be >= 0, got {self.sigma_j}", key="jitter.sigma_j")
        if self.mode not in JITTER_MODES:
            raise InvalidConfigError(f"jitter mode must be one of {JITTER_MODES}, got {self.mode!r}", key="jitter.mode")


def make_rng(seed, *keys) -> np.random.Generator:
    """PCG64 generator seeded from an integer plus optional string/int keys.

    String keys are folded in by CRC32 so that e.g. ``make_rng(42, "img_7")`` is
    stable across processes and platforms (unlike ``hash``).
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        entropy.append(zlib.crc32(k.encode("utf-8")) if isinstance(k, str) else int(k))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def jitter_box(b: Box, cfg: JitterConfig, rng: np.random.Generator) -> list[Box]:
    base = np.array(b.as_tuple(), dtype=np.float64)
    xi = rng.standard_normal((cfg.n_j, 4)) * cfg.sigma_j
    if cfg.mode == "relative":
        scale = np.array([b.width, b.height, b.width, b.height])
        out = base + xi * scale
    else:
        out = (1.0 + xi) * base
    return array_to_boxes(out)
