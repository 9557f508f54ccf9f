"""Independent reference implementations the test suite checks against.

Everything here is deliberately naive (loops, series, bisection) and shares
no code with the package internals it verifies.
"""

import math

import numpy as np


def conv2d_naive(x, kernel, bias, stride=1, padding=0):
    """Quadruple-loop cross-correlation oracle, float64."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    n, cin, h, w = x.shape
    cout, _, kh, kw = kernel.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for ni in range(n):
        for co in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[ni, ci, i * stride + u, j * stride + v] * kernel[co, ci, u, v]
                    out[ni, co, i, j] = acc + bias[co]
    return out


def matmul_naive(a, b):
    """Triple-loop matrix product oracle."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def bce_scalar(logit, label):
    """High-precision scalar binary cross-entropy via the mpmath-free route:
    evaluate in float64 from the exact formula with log1p."""
    z = float(logit)
    if label == 1:
        return math.log1p(math.exp(-z)) if z >= 0 else -z + math.log1p(math.exp(z))
    return z + math.log1p(math.exp(-z)) if z >= 0 else math.log1p(math.exp(z))


def hinge_scalar(logit, bit):
    t = 1.0 if bit == 1 else -1.0
    return max(0.0, 1.0 - t * float(logit))


def binom_tail_geq(n, k, p):
    """Exact P(Bin(n, p) >= k) via log-space summation."""
    if k <= 0:
        return 1.0
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    total = 0.0
    logp = math.log(p)
    log1mp = math.log1p(-p)
    for i in range(k, n + 1):
        logterm = (
            math.lgamma(n + 1)
            - math.lgamma(i + 1)
            - math.lgamma(n - i + 1)
            + i * logp
            + (n - i) * log1mp
        )
        total += math.exp(logterm)
    return min(total, 1.0)


def clopper_pearson_lower_bisect(k, n, alpha, tol=1e-12):
    """Largest p with P(Bin(n,p) >= k) <= 1 - alpha, by bisection."""
    if k == 0:
        return 0.0
    fail = 1.0 - alpha
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if binom_tail_geq(n, k, mid) <= fail:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return lo


def norm_cdf_series(x):
    """Standard normal CDF via the error-function Taylor/continued approach:
    math.erf is exact enough (double precision) and independent of scipy."""
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def inv_norm_cdf_bisect(p, tol=1e-12):
    lo, hi = -40.0, 40.0
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        if norm_cdf_series(mid) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def ssim_reference(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Windowed-statistics SSIM oracle: explicit per-window loops, float64."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    assert a.shape == b.shape and a.ndim == 3
    half = (window - 1) / 2.0
    xs = np.arange(window) - half
    g = np.exp(-(xs**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    w = w / w.sum()
    c1 = k1**2
    c2 = k2**2
    channel_means = []
    for ch in range(a.shape[0]):
        vals = []
        for i in range(a.shape[1] - window + 1):
            for j in range(a.shape[2] - window + 1):
                pa = a[ch, i : i + window, j : j + window]
                pb = b[ch, i : i + window, j : j + window]
                mx = (w * pa).sum()
                my = (w * pb).sum()
                vx = (w * pa * pa).sum() - mx * mx
                vy = (w * pb * pb).sum() - my * my
                cov = (w * pa * pb).sum() - mx * my
                vals.append(
                    ((2 * mx * my + c1) * (2 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2))
                )
        channel_means.append(np.mean(vals))
    return float(np.mean(channel_means))


def rotate180_indices(h, w):
    """Index map oracle for an exact 180-degree rotation."""
    return np.arange(h * w).reshape(h, w)[::-1, ::-1]
