"""Deterministic synthetic signal sources.

Two generators stand in for natural image sources: smoothed Gaussian random
fields (cloud-like textures) and rasterized random shapes (rectangles and
discs over a background).  Both emit signals in [0, 1] and are fully
determined by the dataset seed, so every experiment is reproducible offline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .transforms import blur

GENERATORS = ("gaussian_field", "shapes", "mixed")


@dataclass(frozen=True)
class SynthDatasetSpec:
    count: int = 1000
    shape: tuple = (3, 32, 32)
    generator: str = "gaussian_field"
    correlation_length: float = 3.0
    max_shapes: int = 6
    seed: int = 0
    train_fraction: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))
        if self.count < 2:
            raise InvalidArgumentError(f"count must be >= 2, got {self.count}")
        if len(self.shape) != 3 or any(v < 1 for v in self.shape):
            raise InvalidArgumentError(f"shape must be (C, H, W), got {self.shape}")
        if self.generator not in GENERATORS:
            raise InvalidArgumentError(
                f"generator must be one of {GENERATORS}, got {self.generator!r}"
            )
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidArgumentError(
                f"train_fraction must lie in (0, 1), got {self.train_fraction}"
            )
        if self.correlation_length < 0:
            raise InvalidArgumentError("correlation_length must be >= 0")
        if self.max_shapes < 1:
            raise InvalidArgumentError("max_shapes must be >= 1")


def _gaussian_fields(count, shape, corr_len, rng) -> np.ndarray:
    c, h, w = shape
    noise = rng.normal(size=(count, c, h, w)).astype(np.float32)
    fields = blur(noise.clip(-4, 4) * 0.25 + 0.5, corr_len) if corr_len > 0 else noise * 0.25 + 0.5
    lo = fields.min(axis=(1, 2, 3), keepdims=True)
    hi = fields.max(axis=(1, 2, 3), keepdims=True)
    span = np.where(hi - lo < 1e-8, 1.0, hi - lo)
    return ((fields - lo) / span).astype(np.float32)


def _shape_images(count, shape, max_shapes, rng) -> np.ndarray:
    c, h, w = shape
    out = np.empty((count, c, h, w), dtype=np.float32)
    yy, xx = np.mgrid[0:h, 0:w]
    for i in range(count):
        img = np.full((c, h, w), rng.uniform(0.1, 0.9, size=(c, 1, 1)), dtype=np.float32)
        for _ in range(int(rng.integers(1, max_shapes + 1))):
            color = rng.uniform(0.0, 1.0, size=(c, 1, 1)).astype(np.float32)
            if rng.random() < 0.5:
                y0, x0 = rng.integers(0, h), rng.integers(0, w)
                hh = int(rng.integers(2, max(h // 2, 3)))
                ww = int(rng.integers(2, max(w // 2, 3)))
                mask = (yy >= y0) & (yy < y0 + hh) & (xx >= x0) & (xx < x0 + ww)
            else:
                cy, cx = rng.uniform(0, h), rng.uniform(0, w)
                r = rng.uniform(2, max(min(h, w) / 3.0, 3))
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
            img = np.where(mask[None], color, img)
        out[i] = img
    return np.clip(out, 0.0, 1.0)


def synth_dataset(spec: SynthDatasetSpec):
    """Generate (train, test) signal arrays with disjoint, deterministic splits."""
    rng = np.random.default_rng(np.random.PCG64(spec.seed))
    if spec.generator == "gaussian_field":
        signals = _gaussian_fields(spec.count, spec.shape, spec.correlation_length, rng)
    elif spec.generator == "shapes":
        signals = _shape_images(spec.count, spec.shape, spec.max_shapes, rng)
    else:
        half = spec.count // 2
        a = _gaussian_fields(half, spec.shape, spec.correlation_length, rng)
        b = _shape_images(spec.count - half, spec.shape, spec.max_shapes, rng)
        signals = np.concatenate([a, b], axis=0)
        signals = signals[rng.permutation(spec.count)]
    n_train = max(1, min(spec.count - 1, int(round(spec.count * spec.train_fraction))))
    return signals[:n_train].copy(), signals[n_train:].copy()
