"""Fidelity and accuracy metrics.

SSIM follows the canonical parameterization (11x11 Gaussian window with
sigma 1.5, stabilizers (0.01 L)^2 and (0.03 L)^2) on a unit dynamic range;
PSNR uses peak 1 since all signals live in [0, 1].  Both compute in float64
regardless of input dtype and accept (C, H, W) arrays or Tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .detector import predict
from .errors import InvalidArgumentError

PSNR_INFINITE = math.inf  # sentinel for identical signals (zero MSE)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    count: int
    params: tuple = field(default=())


def _as_array(s) -> np.ndarray:
    arr = s.data if isinstance(s, Tensor) else np.asarray(s)
    return np.asarray(arr, dtype=np.float64)


def _ssim_window() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    xs = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(xs**2) / (2.0 * SSIM_SIGMA**2))
    w = np.outer(g, g)
    return w / w.sum()


_WINDOW = _ssim_window()


def _filter_valid(img: np.ndarray) -> np.ndarray:
    """Windowed weighted means over all full 11x11 windows of one channel."""
    h, w = img.shape
    win = np.lib.stride_tricks.sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
    return np.einsum("hwuv,uv->hw", win, _WINDOW, optimize=True)


def ssim(a, b) -> float:
    """Mean structural similarity between two equal-shape signals in [0, 1]."""
    x = _as_array(a)
    y = _as_array(b)
    if x.shape != y.shape:
        raise InvalidArgumentError(f"ssim: shapes differ, {x.shape} vs {y.shape}")
    if x.ndim != 3:
        raise InvalidArgumentError(f"ssim: expected (C, H, W), got {x.shape}")
    if x.shape[1] < SSIM_WINDOW or x.shape[2] < SSIM_WINDOW:
        raise InvalidArgumentError(
            f"ssim: image {x.shape[1]}x{x.shape[2]} smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    c1 = (SSIM_K1) ** 2
    c2 = (SSIM_K2) ** 2
    values = []
    for ch in range(x.shape[0]):
        xc, yc = x[ch], y[ch]
        mx = _filter_valid(xc)
        my = _filter_valid(yc)
        mxx = _filter_valid(xc * xc)
        myy = _filter_valid(yc * yc)
        mxy = _filter_valid(xc * yc)
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        num = (2 * mx * my + c1) * (2 * cov + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB with peak 1; +inf when signals match."""
    x = _as_array(a)
    y = _as_array(b)
    if x.shape != y.shape:
        raise InvalidArgumentError(f"psnr: shapes differ, {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_INFINITE
    return 10.0 * math.log10(1.0 / mse)


def detection_accuracy(model, signals, labels, threshold: float = 0.0) -> MetricReport:
    """Fraction of detector decisions matching the given {0,1} labels.

    An empty input is vacuously perfect (value 1.0, count 0).
    """
    signals = list(signals)
    labels = list(labels)
    if len(signals) != len(labels):
        raise InvalidArgumentError(
            f"detection_accuracy: {len(signals)} signals vs {len(labels)} labels"
        )
    if not signals:
        return MetricReport("detection_accuracy", 1.0, 0, (("threshold", threshold),))
    batch = np.stack([s.data if isinstance(s, Tensor) else np.asarray(s) for s in signals])
    preds = predict(model, batch.astype(np.float32), threshold=threshold)
    value = float(np.mean(preds == np.asarray(labels)))
    return MetricReport("detection_accuracy", value, len(signals), (("threshold", threshold),))
