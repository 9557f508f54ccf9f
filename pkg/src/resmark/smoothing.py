"""Randomized-smoothing certification of detector decisions.

A detection is certified by majority vote under isotropic Gaussian input
noise: with an exact one-sided binomial lower bound p on the majority-class
probability (at confidence alpha), the decision is provably stable against
any perturbation of l2 norm below sigma * Phi^-1(p).  The smoothing noise is
deliberately not clipped to [0, 1]: the radius argument assumes an exact
Gaussian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from . import autodiff as ag
from .detector import DetectorModel, predict
from .errors import InvalidArgumentError

_MC_CHUNK = 512


@dataclass(frozen=True)
class Certificate:
    predicted_label: int
    p_lower: float
    radius: float
    abstained: bool
    samples_used: int
    sigma: float
    alpha: float


def _predict_fn(classifier):
    """Accept a DetectorModel or any callable mapping (N,C,H,W) -> {0,1} labels."""
    if isinstance(classifier, DetectorModel):
        return lambda batch: predict(classifier, batch)
    if callable(classifier):
        return classifier
    raise InvalidArgumentError("classifier must be a DetectorModel or a callable")


def mc_class_counts(classifier, s, sigma: float, n: int, rng) -> tuple:
    """Count hard decisions over ``n`` Gaussian-noised copies of ``s``.

    Returns (count_0, count_1); counts always sum to ``n``.
    """
    if n < 1:
        raise InvalidArgumentError(f"mc_class_counts: n must be >= 1, got {n}")
    if sigma < 0:
        raise InvalidArgumentError(f"mc_class_counts: sigma must be >= 0, got {sigma}")
    fn = _predict_fn(classifier)
    arr = s.data if isinstance(s, ag.Tensor) else np.asarray(s)
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 3:
        raise InvalidArgumentError(f"mc_class_counts: expected one (C,H,W) signal, got {arr.shape}")
    ones = 0
    remaining = n
    while remaining > 0:
        m = min(_MC_CHUNK, remaining)
        batch = arr[None] + rng.normal(0.0, sigma, size=(m,) + arr.shape).astype(np.float32)
        labels = fn(batch)
        ones += int(np.sum(labels == 1))
        remaining -= m
    return n - ones, ones


def clopper_pearson_lower(k: int, n: int, alpha: float) -> float:
    """Exact one-sided lower confidence bound for a binomial proportion.

    The largest p with P(Bin(n, p) >= k) <= 1 - alpha; 0 when k == 0.
    ``alpha`` is the confidence level (0.99 means a 1% failure chance).
    """
    if not 0 <= k <= n or n < 1:
        raise InvalidArgumentError(f"clopper_pearson_lower: invalid k={k}, n={n}")
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError(f"clopper_pearson_lower: alpha must lie in (0,1), got {alpha}")
    if k == 0:
        return 0.0
    if k == n:
        return float((1.0 - alpha) ** (1.0 / n))
    return float(stats.beta.ppf(1.0 - alpha, k, n - k + 1))


def inv_norm_cdf(p: float) -> float:
    """Standard normal quantile Phi^-1(p) for p in (0, 1)."""
    if not 0.0 < p < 1.0:
        raise InvalidArgumentError(f"inv_norm_cdf: p must lie in (0, 1), got {p}")
    return float(special.ndtri(p))


def certify(classifier, s, sigma: float, n: int, alpha: float, rng) -> Certificate:
    """Certify the smoothed decision at ``s``; abstains when p_lower <= 1/2."""
    count0, count1 = mc_class_counts(classifier, s, sigma, n, rng)
    if count1 > count0:
        label, k = 1, count1
    elif count0 > count1:
        label, k = 0, count0
    else:
        label, k = 0, count0  # exact tie: conservative label, will abstain
    p_lower = clopper_pearson_lower(k, n, alpha)
    if p_lower <= 0.5:
        return Certificate(label, p_lower, 0.0, True, n, sigma, alpha)
    radius = sigma * inv_norm_cdf(p_lower)
    return Certificate(label, p_lower, radius, False, n, sigma, alpha)
