"""Signal transformations a watermark must survive.

Training-time transforms (noise, rotation, crop, flip, brightness, blur,
contrast) are differentiable with respect to the signal, so watermark
gradients can flow through them.  ``jpeg_like`` and ``pixel_dropout`` are
evaluation-only: applying them to a gradient-tracking tensor is an error.
Gradients never flow through transform parameters, only through the signal.

All transforms map [0, 1] signals to [0, 1] signals and accept either a
single (C, H, W) signal or an (N, C, H, W) batch; random parameters are drawn
per batch item.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ag
from .autodiff import Tensor
from .errors import InvalidArgumentError, InvalidStateError

DIFFERENTIABLE_KINDS = frozenset(
    {"gaussian_noise", "rotation", "crop", "hflip", "brightness", "blur", "contrast"}
)
EVAL_ONLY_KINDS = frozenset({"jpeg_like", "pixel_dropout"})
ALL_KINDS = DIFFERENTIABLE_KINDS | EVAL_ONLY_KINDS


@dataclass(frozen=True)
class TransformSpec:
    """One parameterized transformation distribution.

    Use the named constructors; ``params`` keys are fixed per kind.
    """

    kind: str
    params: tuple = field(default=())  # sorted (name, value) pairs

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise InvalidArgumentError(f"unknown transform kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(sorted((str(k), float(v)) for k, v in self.params)))
        p = self.param_dict()
        if self.kind == "gaussian_noise" and p["sigma"] < 0:
            raise InvalidArgumentError("gaussian_noise: sigma must be >= 0")
        if self.kind == "rotation" and not np.isfinite(p["r"]):
            raise InvalidArgumentError("rotation: range must be finite")
        if self.kind == "crop" and (p["c_h"] < 0 or p["c_w"] < 0):
            raise InvalidArgumentError("crop: crop amounts must be >= 0")
        if self.kind == "brightness" and not 0.0 <= p["b"] <= 1.0:
            raise InvalidArgumentError("brightness: b must lie in [0, 1]")
        if self.kind == "blur" and p["sigma"] < 0:
            raise InvalidArgumentError("blur: sigma must be >= 0")
        if self.kind == "contrast" and p["f"] < 0:
            raise InvalidArgumentError("contrast: factor must be >= 0")
        if self.kind == "jpeg_like" and not 1 <= p["quality"] <= 100:
            raise InvalidArgumentError("jpeg_like: quality must lie in [1, 100]")
        if self.kind == "pixel_dropout" and not 0.0 <= p["p"] <= 100.0:
            raise InvalidArgumentError("pixel_dropout: p must lie in [0, 100]")

    def param_dict(self) -> dict:
        return dict(self.params)

    @property
    def differentiable(self) -> bool:
        return self.kind in DIFFERENTIABLE_KINDS

    @classmethod
    def gaussian_noise(cls, sigma: float) -> "TransformSpec":
        return cls("gaussian_noise", (("sigma", sigma),))

    @classmethod
    def rotation(cls, r: float) -> "TransformSpec":
        return cls("rotation", (("r", r),))

    @classmethod
    def crop(cls, c_h: int, c_w: int) -> "TransformSpec":
        return cls("crop", (("c_h", c_h), ("c_w", c_w)))

    @classmethod
    def hflip(cls) -> "TransformSpec":
        return cls("hflip", ())

    @classmethod
    def brightness(cls, b: float) -> "TransformSpec":
        return cls("brightness", (("b", b),))

    @classmethod
    def blur(cls, sigma: float) -> "TransformSpec":
        return cls("blur", (("sigma", sigma),))

    @classmethod
    def contrast(cls, f: float) -> "TransformSpec":
        return cls("contrast", (("f", f),))

    @classmethod
    def jpeg_like(cls, quality: int) -> "TransformSpec":
        return cls("jpeg_like", (("quality", quality),))

    @classmethod
    def pixel_dropout(cls, p: float) -> "TransformSpec":
        return cls("pixel_dropout", (("p", p),))


@dataclass(frozen=True)
class TransformPipeline:
    """A sampled selection (``single_random``) or ordered composition of specs."""

    specs: tuple
    mode: str = "single_random"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        if not self.specs:
            raise InvalidArgumentError("pipeline needs at least one transform spec")
        if self.mode not in ("single_random", "composition"):
            raise InvalidArgumentError(f"unknown pipeline mode {self.mode!r}")

    @property
    def differentiable(self) -> bool:
        return all(s.differentiable for s in self.specs)


# ---------------------------------------------------------------------------
# shape plumbing


def _to_batch(s):
    """Normalize input to (Tensor(N,C,H,W), was_ndarray, was_3d)."""
    was_nd = not isinstance(s, Tensor)
    if was_nd:
        arr = np.asarray(s)
        dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else None
        t = Tensor(arr, dtype=dtype)
    else:
        t = s
    if t.data.ndim == 3:
        return ag.reshape(t, (1,) + t.data.shape), was_nd, True
    if t.data.ndim != 4:
        raise InvalidArgumentError(f"signal must have 3 or 4 dims, got {t.data.ndim}")
    return t, was_nd, False


def _from_batch(out: Tensor, was_nd: bool, was_3d: bool):
    if was_3d:
        out = ag.reshape(out, out.data.shape[1:])
    return out.data if was_nd else out


def _require_no_grad(name: str, t: Tensor):
    if t.requires_grad and ag._grad_enabled:
        raise InvalidStateError(
            f"{name} is evaluation-only and cannot run in a gradient-tracking context"
        )


# ---------------------------------------------------------------------------
# differentiable transforms


def gaussian_noise(s, sigma: float, rng=None):
    """Add i.i.d. zero-mean Gaussian noise, then clip back into [0, 1]."""
    if sigma < 0:
        raise InvalidArgumentError(f"gaussian_noise: sigma must be >= 0, got {sigma}")
    x, was_nd, was_3d = _to_batch(s)
    if sigma == 0:
        return _from_batch(x, was_nd, was_3d)
    rng = np.random.default_rng() if rng is None else rng
    eta = rng.normal(0.0, sigma, size=x.data.shape).astype(x.data.dtype)
    out = ag.clip01(ag.add(x, Tensor(eta, dtype=x.data.dtype)))
    return _from_batch(out, was_nd, was_3d)


def _rotation_grids(angles, h, w, dtype):
    """Per-item inverse-map sampling grids for rotation about the image center."""
    angles = np.asarray(angles, dtype=np.float64)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dy = (ii - cy)[None]
    dx = (jj - cx)[None]
    cos = np.cos(angles)[:, None, None]
    sin = np.sin(angles)[:, None, None]
    src_y = cos * dy + sin * dx + cy
    src_x = -sin * dy + cos * dx + cx
    # snap near-integer coordinates so axis-aligned rotations are exact
    for g in (src_y, src_x):
        r = np.round(g)
        near = np.abs(g - r) < 1e-6
        g[near] = r[near]
    return src_y.astype(dtype), src_x.astype(dtype)


def rotate(s, angle):
    """Rotate about the image center, bilinear interpolation, zero fill outside.

    ``angle`` is in radians: a scalar, or one angle per batch item.
    """
    x, was_nd, was_3d = _to_batch(s)
    n, _, h, w = x.data.shape
    angles = np.broadcast_to(np.asarray(angle, dtype=np.float64), (n,))
    if not np.all(np.isfinite(angles)):
        raise InvalidArgumentError("rotate: angle must be finite")
    if np.all(angles == 0.0):
        return _from_batch(x, was_nd, was_3d)
    src_y, src_x = _rotation_grids(angles, h, w, x.data.dtype)
    out = ag.grid_sample_bilinear(x, src_y, src_x, fill_zero=True)
    return _from_batch(out, was_nd, was_3d)


def _resize_grid(n, h_in, w_in, h_out, w_out, dtype):
    sy = h_in / h_out
    sx = w_in / w_out
    src_y = (np.arange(h_out, dtype=np.float64) + 0.5) * sy - 0.5
    src_x = (np.arange(w_out, dtype=np.float64) + 0.5) * sx - 0.5
    gy = np.broadcast_to(src_y[:, None], (h_out, w_out))
    gx = np.broadcast_to(src_x[None, :], (h_out, w_out))
    gy = np.broadcast_to(gy[None], (n, h_out, w_out)).astype(dtype)
    gx = np.broadcast_to(gx[None], (n, h_out, w_out)).astype(dtype)
    return gy, gx


def resize_bilinear(s, h_out: int, w_out: int):
    """Bilinear resize with half-pixel-centered sampling and edge clamping."""
    x, was_nd, was_3d = _to_batch(s)
    n, _, h, w = x.data.shape
    if h_out == h and w_out == w:
        return _from_batch(x, was_nd, was_3d)
    gy, gx = _resize_grid(n, h, w, h_out, w_out, x.data.dtype)
    out = ag.grid_sample_bilinear(x, gy, gx, fill_zero=False)
    return _from_batch(out, was_nd, was_3d)


def crop_resize(s, c_h: int, c_w: int, rng=None, offsets=None):
    """Random crop of ``c_h``/``c_w`` pixels of height/width, resized back.

    ``offsets`` (top, left) per item overrides the random draw.
    """
    x, was_nd, was_3d = _to_batch(s)
    n, _, h, w = x.data.shape
    c_h, c_w = int(c_h), int(c_w)
    if c_h < 0 or c_w < 0:
        raise InvalidArgumentError("crop_resize: crop amounts must be >= 0")
    if c_h >= h or c_w >= w:
        raise InvalidArgumentError(
            f"crop_resize: crop ({c_h}, {c_w}) must be smaller than image ({h}, {w})"
        )
    if c_h == 0 and c_w == 0:
        return _from_batch(x, was_nd, was_3d)
    if offsets is None:
        rng = np.random.default_rng() if rng is None else rng
        tops = rng.integers(0, c_h + 1, size=n)
        lefts = rng.integers(0, c_w + 1, size=n)
    else:
        tops = np.broadcast_to(np.asarray(offsets[0]), (n,))
        lefts = np.broadcast_to(np.asarray(offsets[1]), (n,))
    hc, wc = h - c_h, w - c_w
    # per-item offsets expressed through one sampling grid: crop + resize fused
    gy, gx = _resize_grid(n, hc, wc, h, w, x.data.dtype)
    gy = gy + np.asarray(tops, dtype=x.data.dtype)[:, None, None]
    gx = gx + np.asarray(lefts, dtype=x.data.dtype)[:, None, None]
    # clamp into the cropped window so edge behavior matches crop-then-resize
    gy = np.clip(gy, tops[:, None, None], (tops + hc - 1)[:, None, None]).astype(x.data.dtype)
    gx = np.clip(gx, lefts[:, None, None], (lefts + wc - 1)[:, None, None]).astype(x.data.dtype)
    out = ag.grid_sample_bilinear(x, gy, gx, fill_zero=False)
    return _from_batch(out, was_nd, was_3d)


def hflip(s, rng=None, flip=None):
    """Mirror the width axis with probability 1/2 (per batch item).

    ``flip`` (bool or per-item bools) overrides the coin toss.
    """
    x, was_nd, was_3d = _to_batch(s)
    n = x.data.shape[0]
    if flip is None:
        rng = np.random.default_rng() if rng is None else rng
        flips = rng.random(n) < 0.5
    else:
        flips = np.broadcast_to(np.asarray(flip, dtype=bool), (n,))
    if not flips.any():
        return _from_batch(x, was_nd, was_3d)
    if flips.all():
        return _from_batch(ag.flip_w(x), was_nd, was_3d)
    mask = Tensor(flips[:, None, None, None].astype(x.data.dtype), dtype=x.data.dtype)
    keep = Tensor((~flips)[:, None, None, None].astype(x.data.dtype), dtype=x.data.dtype)
    flipped = ag.flip_w(x)
    out = ag.add(_mul_bcast(flipped, mask), _mul_bcast(x, keep))
    return _from_batch(out, was_nd, was_3d)


def _mul_bcast(x: Tensor, m: Tensor) -> Tensor:
    """Multiply (N,C,H,W) by an (N,1,1,1) mask; gradient only w.r.t. x."""
    out = x.data * m.data

    def bw(g):
        return (g * m.data if x.requires_grad else None, None)

    return ag._make(out, (x, m), bw)


def _affine_per_item(x: Tensor, scale, shift) -> Tensor:
    """Per-batch-item affine ``scale * x + shift`` with (N,)-shaped constants."""
    s = np.asarray(scale, dtype=x.data.dtype).reshape(-1, 1, 1, 1)
    t = np.asarray(shift, dtype=x.data.dtype).reshape(-1, 1, 1, 1)
    out = s * x.data + t

    def bw(g):
        return (g * s,)

    return ag._make(out, (x,), bw)


def brightness(s, b: float):
    """Blend toward white: (1 - b) * s + b.  b=0 is identity, b=1 all-white."""
    if not 0.0 <= b <= 1.0:
        raise InvalidArgumentError(f"brightness: b must lie in [0, 1], got {b}")
    x, was_nd, was_3d = _to_batch(s)
    if b == 0.0:
        return _from_batch(x, was_nd, was_3d)
    out = ag.add(ag.mul(x, float(1.0 - b)), float(b))
    return _from_batch(out, was_nd, was_3d)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized Gaussian taps with radius ceil(3 sigma); [1] when sigma == 0."""
    if sigma <= 0:
        return np.ones(1)
    r = int(np.ceil(3.0 * sigma))
    xs = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def blur(s, sigma: float):
    """Separable Gaussian blur with reflect padding; kernel sums to 1."""
    if sigma < 0:
        raise InvalidArgumentError(f"blur: sigma must be >= 0, got {sigma}")
    x, was_nd, was_3d = _to_batch(s)
    if sigma == 0:
        return _from_batch(x, was_nd, was_3d)
    k = gaussian_kernel1d(sigma)
    out = ag.correlate1d_reflect(x, k, axis=2)
    out = ag.correlate1d_reflect(out, k, axis=3)
    return _from_batch(out, was_nd, was_3d)


def contrast(s, f: float):
    """Scale deviations from the per-image mean by ``f`` and clip to [0, 1].

    f=1 is the identity; f=0 collapses to a constant image at its mean.
    """
    if f < 0:
        raise InvalidArgumentError(f"contrast: factor must be >= 0, got {f}")
    x, was_nd, was_3d = _to_batch(s)
    if f == 1.0:
        return _from_batch(x, was_nd, was_3d)
    n = x.data.shape[0]
    m = x.data[0].size
    dt = x.data.dtype
    mu = x.data.mean(axis=(1, 2, 3), keepdims=True, dtype=np.float64).astype(dt)
    pre = mu + np.asarray(f, dtype=dt) * (x.data - mu)
    out_data = np.clip(pre, 0.0, 1.0)
    interior = (pre > 0.0) & (pre < 1.0)

    def bw(g):
        gm = g * interior
        gsum = gm.sum(axis=(1, 2, 3), keepdims=True, dtype=np.float64).astype(dt)
        return ((np.asarray(f, dtype=dt) * gm + (1.0 - f) / m * gsum).astype(dt),)

    out = ag._make(out_data, (x,), bw)
    return _from_batch(out, was_nd, was_3d)


# ---------------------------------------------------------------------------
# evaluation-only transforms

# Standard JPEG luminance quantization table (Annex K of the JPEG standard).
_JPEG_LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


def _dct_matrix(n: int = 8) -> np.ndarray:
    j = np.arange(n)
    u = j[:, None]
    c = np.cos((2 * j[None, :] + 1) * u * np.pi / (2 * n)) * np.sqrt(2.0 / n)
    c[0] /= np.sqrt(2.0)
    return c


_DCT8 = _dct_matrix(8)


def jpeg_like(s, quality: int):
    """Blockwise DCT quantization mimicking JPEG's pixel effect (no entropy coding).

    Each channel is split into 8x8 blocks (edge-padded when needed), DCT'd,
    quantized with the standard luminance table scaled by the quality factor,
    and reconstructed.  Evaluation-only: not differentiable.
    """
    quality = int(quality)
    if not 1 <= quality <= 100:
        raise InvalidArgumentError(f"jpeg_like: quality must lie in [1, 100], got {quality}")
    x, was_nd, was_3d = _to_batch(s)
    _require_no_grad("jpeg_like", x)
    n, c, h, w = x.data.shape
    scale = 50.0 / quality if quality < 50 else 2.0 - quality / 50.0
    qtable = np.maximum(_JPEG_LUMA_TABLE * scale, 1.0)

    ph = (-h) % 8
    pw = (-w) % 8
    arr = np.asarray(x.data, dtype=np.float64) * 255.0 - 128.0
    if ph or pw:
        arr = np.pad(arr, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")
    hb, wb = arr.shape[2] // 8, arr.shape[3] // 8
    blocks = arr.reshape(n, c, hb, 8, wb, 8).transpose(0, 1, 2, 4, 3, 5)
    coeffs = np.einsum("ij,nchwjk,lk->nchwil", _DCT8, blocks, _DCT8, optimize=True)
    coeffs = np.round(coeffs / qtable) * qtable
    rec = np.einsum("ji,nchwjk,kl->nchwil", _DCT8, coeffs, _DCT8, optimize=True)
    rec = rec.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hb * 8, wb * 8)
    rec = rec[:, :, :h, :w]
    out_data = np.clip((rec + 128.0) / 255.0, 0.0, 1.0).astype(x.data.dtype)
    out = Tensor(out_data, dtype=x.data.dtype)
    return _from_batch(out, was_nd, was_3d)


def pixel_dropout(s_hat, s_orig, p: float, rng=None, mask=None):
    """Keep each pixel of ``s_hat`` with probability p/100, else restore the original.

    The keep/restore decision is per pixel position, shared across channels.
    Evaluation-only: not differentiable.
    """
    if not 0.0 <= p <= 100.0:
        raise InvalidArgumentError(f"pixel_dropout: p must lie in [0, 100], got {p}")
    x, was_nd, was_3d = _to_batch(s_hat)
    o, _, o3d = _to_batch(s_orig)
    if o.data.shape != x.data.shape:
        raise InvalidArgumentError(
            f"pixel_dropout: shapes differ, {x.data.shape} vs {o.data.shape}"
        )
    _require_no_grad("pixel_dropout", x)
    _require_no_grad("pixel_dropout", o)
    n, c, h, w = x.data.shape
    if mask is None:
        rng = np.random.default_rng() if rng is None else rng
        mask = rng.random((n, 1, h, w)) < (p / 100.0)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), (n, 1, h, w))
    out_data = np.where(mask, x.data, o.data)
    out = Tensor(out_data, dtype=x.data.dtype)
    return _from_batch(out, was_nd, was_3d)


# ---------------------------------------------------------------------------
# pipeline application


def sample_spec_params(spec: TransformSpec, batch_shape, rng) -> dict:
    """Draw one transform instance (all randomness realized) for a batch shape."""
    n, _, h, w = batch_shape
    p = spec.param_dict()
    if spec.kind == "gaussian_noise":
        if p["sigma"] == 0:
            return {"eta": None}
        return {"eta": rng.normal(0.0, p["sigma"], size=batch_shape)}
    if spec.kind == "rotation":
        return {"angles": rng.uniform(-p["r"], p["r"], size=n)}
    if spec.kind == "crop":
        return {
            "tops": rng.integers(0, int(p["c_h"]) + 1, size=n),
            "lefts": rng.integers(0, int(p["c_w"]) + 1, size=n),
        }
    if spec.kind == "hflip":
        return {"flips": rng.random(n) < 0.5}
    if spec.kind == "brightness":
        return {"b": rng.uniform(0.0, p["b"], size=n)}
    if spec.kind == "pixel_dropout":
        return {"mask": rng.random((n, 1, h, w)) < (p["p"] / 100.0)}
    return {}  # blur, contrast, jpeg_like: deterministic given the spec


def apply_spec_with_params(spec: TransformSpec, s, inst: dict, original=None):
    """Apply one realized transform instance (from ``sample_spec_params``)."""
    p = spec.param_dict()
    if spec.kind == "gaussian_noise":
        if inst["eta"] is None:
            return s
        x, was_nd, was_3d = _to_batch(s)
        eta = Tensor(inst["eta"], dtype=x.data.dtype)
        return _from_batch(ag.clip01(ag.add(x, eta)), was_nd, was_3d)
    if spec.kind == "rotation":
        return rotate(s, inst["angles"])
    if spec.kind == "crop":
        return crop_resize(s, int(p["c_h"]), int(p["c_w"]), offsets=(inst["tops"], inst["lefts"]))
    if spec.kind == "hflip":
        return hflip(s, flip=inst["flips"])
    if spec.kind == "brightness":
        x, was_nd, was_3d = _to_batch(s)
        b = np.broadcast_to(np.asarray(inst["b"]), (x.data.shape[0],))
        return _from_batch(_affine_per_item(x, 1.0 - b, b), was_nd, was_3d)
    if spec.kind == "blur":
        return blur(s, p["sigma"])
    if spec.kind == "contrast":
        return contrast(s, p["f"])
    if spec.kind == "jpeg_like":
        return jpeg_like(s, int(p["quality"]))
    if spec.kind == "pixel_dropout":
        if original is None:
            raise InvalidArgumentError(
                "pixel_dropout inside a pipeline needs the original signal "
                "(pass original=...)"
            )
        return pixel_dropout(s, original, p["p"], mask=inst["mask"])
    raise InvalidArgumentError(f"unknown transform kind {spec.kind!r}")


def apply_spec(spec: TransformSpec, s, rng, original=None):
    """Sample one instance of ``spec`` and apply it."""
    shape = s.data.shape if isinstance(s, Tensor) else np.asarray(s).shape
    if len(shape) == 3:
        shape = (1,) + tuple(shape)
    inst = sample_spec_params(spec, shape, rng)
    return apply_spec_with_params(spec, s, inst, original=original)


def sample_pipeline_instance(pipe: TransformPipeline, batch_shape, rng) -> list:
    """Realize one pipeline draw: the chosen spec(s) with all randomness fixed.

    The returned instance can be applied to several tensors (for example a
    watermarked batch and its clean counterpart) so both see the same
    transformation.
    """
    if pipe.mode == "single_random":
        chosen = [pipe.specs[int(rng.integers(0, len(pipe.specs)))]]
    else:
        chosen = list(pipe.specs)
    return [(spec, sample_spec_params(spec, batch_shape, rng)) for spec in chosen]


def apply_pipeline_instance(instance, s, original=None):
    """Apply a realized pipeline instance from ``sample_pipeline_instance``."""
    out = s
    for spec, inst in instance:
        out = apply_spec_with_params(spec, out, inst, original=original)
    return out


def tile_instance(instance, reps: int) -> list:
    """Repeat a realized instance's per-item draws so it covers ``reps``
    stacked copies of the batch it was sampled for (same draw per copy)."""
    tiled = []
    for spec, inst in instance:
        t = {}
        for key, val in inst.items():
            if val is None:
                t[key] = None
            else:
                arr = np.asarray(val)
                t[key] = np.concatenate([arr] * reps, axis=0) if arr.ndim else val
        tiled.append((spec, t))
    return tiled


def apply_pipeline(pipe: TransformPipeline, s, rng=None, original=None):
    """Apply the pipeline: one uniformly drawn spec, or all specs in order.

    With ``rng=None`` a fresh generator is seeded from ``pipe.seed``, so
    repeated calls reproduce the same draws.  Output is clipped to [0, 1].
    """
    rng = np.random.default_rng(np.random.PCG64(pipe.seed)) if rng is None else rng
    shape = s.data.shape if isinstance(s, Tensor) else np.asarray(s).shape
    if len(shape) == 3:
        shape = (1,) + tuple(shape)
    instance = sample_pipeline_instance(pipe, shape, rng)
    out = apply_pipeline_instance(instance, s, original=original)
    # defensive range closure; individual transforms already stay in [0, 1]
    if isinstance(out, Tensor):
        if out.requires_grad:
            return ag.clip01(out)
        return Tensor(np.clip(out.data, 0.0, 1.0), dtype=out.data.dtype)
    return np.clip(out, 0.0, 1.0)
