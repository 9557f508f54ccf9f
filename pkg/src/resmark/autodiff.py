"""Dense tensor arithmetic with reverse-mode automatic differentiation.

The engine is define-by-run: every operation on gradient-tracking tensors
records a node holding its inputs and a backward rule, and ``backward`` on a
scalar replays those rules in reverse topological order.  The op set is
exactly what a small convolutional detector, its losses, and differentiable
signal transformations need; there is no broadcasting beyond the documented
cases and no GPU path.

Precision: tensors default to float32 storage and compute (``DEFAULT_DTYPE``);
reductions accumulate in float64 before casting back.  All kernels are
dtype-generic, so float64 tensors flow through the same code paths, which is
what the finite-difference test suite uses.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import InvalidArgumentError, InvalidStateError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class _Node:
    """One recorded operation: its input tensors and a backward rule.

    ``backward`` maps the output gradient to a tuple of per-input gradients
    (``None`` for inputs that do not need one).
    """

    __slots__ = ("inputs", "backward")

    def __init__(self, inputs, backward):
        self.inputs = inputs
        self.backward = backward


class Tensor:
    """A dense n-dimensional float array with an optional gradient slot.

    ``grad`` is ``None`` until ``backward`` reaches this tensor; a missing
    gradient is equivalent to zero.  Repeated backward passes accumulate.
    A tensor and any graph hanging off it belong to one logical thread.
    """

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=DEFAULT_DTYPE if dtype is None else dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        """A view of the same data with no graph attached."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.node = None
        return out

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, inputs, backward_fn) -> Tensor:
    """Wrap an op result, recording a node when gradients are being tracked."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node = None
    out.requires_grad = False
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = _Node(inputs, backward_fn)
    return out


def backward(loss: Tensor):
    """Populate ``grad`` on every reachable gradient-tracking leaf.

    ``loss`` must be a scalar (one element) produced on the current graph.
    Interior gradients are kept in a scratch table; only tensors with
    ``requires_grad`` get their ``grad`` field written (accumulating).
    """
    if loss.data.size != 1:
        raise InvalidArgumentError(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )

    # Iterative post-order DFS; recursion would overflow on long PGD chains.
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            topo.append(t)
            continue
        if id(t) in seen or t.node is None:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for inp in t.node.inputs:
            if inp.node is not None and id(inp) not in seen:
                stack.append((inp, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(topo):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        input_grads = t.node.backward(g)
        for inp, gi in zip(t.node.inputs, input_grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp.node is None:
                inp.grad = gi if inp.grad is None else inp.grad + gi
            else:
                prev = grads.get(id(inp))
                grads[id(inp)] = gi if prev is None else prev + gi

    # A scalar leaf used directly as the loss.
    if loss.node is None and loss.requires_grad:
        g = np.ones_like(loss.data)
        loss.grad = g if loss.grad is None else loss.grad + g


# ---------------------------------------------------------------------------
# elementwise / reduction primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise InvalidArgumentError(f"add: shapes {a.data.shape} vs {b.data.shape}")
    out = a.data + b.data

    def bw(g):
        ga = g if a.data.shape == g.shape else np.asarray(g.sum(), dtype=g.dtype)
        gb = g if b.data.shape == g.shape else np.asarray(g.sum(), dtype=g.dtype)
        return (ga if a.requires_grad else None, gb if b.requires_grad else None)

    return _make(out, (a, b), bw)


def sub(a, b) -> Tensor:
    return add(a, neg(_as_tensor(b)))


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise InvalidArgumentError(f"mul: shapes {a.data.shape} vs {b.data.shape}")
    out = a.data * b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = g * b.data
            if a.data.shape != out.shape:
                ga = np.asarray(ga.sum(), dtype=g.dtype)
        if b.requires_grad:
            gb = g * a.data
            if b.data.shape != out.shape:
                gb = np.asarray(gb.sum(), dtype=g.dtype)
        return (ga, gb)

    return _make(out, (a, b), bw)


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.asarray(x.data.sum(dtype=np.float64), dtype=x.data.dtype)

    def bw(g):
        return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype, copy=True),)

    return _make(out, (x,), bw)


def mean_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size
    out = np.asarray(x.data.mean(dtype=np.float64), dtype=x.data.dtype)

    def bw(g):
        return ((np.broadcast_to(g, x.data.shape) / n).astype(x.data.dtype),)

    return _make(out, (x,), bw)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0); the subgradient at 0 is taken as 0."""
    x = _as_tensor(x)
    out = np.maximum(x.data, 0)

    def bw(g):
        return (g * (out > 0),)

    return _make(out, (x,), bw)


def clip01(x: Tensor) -> Tensor:
    """Clip into [0, 1]; gradient passes only through the strict interior."""
    x = _as_tensor(x)
    out = np.clip(x.data, 0.0, 1.0)
    if x.requires_grad and _grad_enabled:
        mask = (x.data > 0.0) & (x.data < 1.0)
        return _make(out, (x,), lambda g: (g * mask,))
    return _make(out, (x,), None)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties route the gradient to the first argument."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise InvalidArgumentError(f"maximum: shapes {a.data.shape} vs {b.data.shape}")
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)

    def bw(g):
        ga = g * take_a if a.requires_grad else None
        gb = g * ~take_a if b.requires_grad else None
        return (ga, gb)

    return _make(out, (a, b), bw)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    out = x.data.reshape(shape)

    def bw(g):
        return (g.reshape(x.data.shape),)

    return _make(out, (x,), bw)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        parts = np.split(g, splits, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, tensors))

    return _make(out, tuple(tensors), bw)


# ---------------------------------------------------------------------------
# neural-network primitives


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding over NCHW input.

    Output spatial size is ``floor((H + 2p - kh) / stride) + 1``.  The heavy
    lifting is an im2col + BLAS matmul; the column matrix is kept for the
    kernel gradient only while the kernel tracks gradients.
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if x.data.ndim != 4:
        raise InvalidArgumentError(f"conv2d: input must be 4-d NCHW, got {x.data.shape}")
    if kernel.data.ndim != 4:
        raise InvalidArgumentError(f"conv2d: kernel must be 4-d, got {kernel.data.shape}")
    n, cin, h, w = x.data.shape
    cout, cin_k, kh, kw = kernel.data.shape
    if cin_k != cin:
        raise InvalidArgumentError(
            f"conv2d: kernel expects {cin_k} input channels, input has {cin}"
        )
    if bias.data.shape != (cout,):
        raise InvalidArgumentError(
            f"conv2d: bias shape {bias.data.shape} != ({cout},)"
        )
    if stride < 1:
        raise InvalidArgumentError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise InvalidArgumentError(f"conv2d: padding must be >= 0, got {padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise InvalidArgumentError(
            f"conv2d: kernel ({kh}x{kw}) larger than padded input "
            f"({h + 2 * padding}x{w + 2 * padding})"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :]
    ho, wo = win.shape[2], win.shape[3]
    # (N*Ho*Wo, Cin*kh*kw) contiguous for BLAS
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
    kmat = kernel.data.reshape(cout, cin * kh * kw)
    out = cols @ kmat.T
    out += bias.data[None, :]
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    keep_cols = kernel.requires_grad and _grad_enabled
    cols_saved = cols if keep_cols else None

    def bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gk = gb = gx = None
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3)).astype(bias.data.dtype, copy=False)
        if kernel.requires_grad:
            gk = (gmat.T @ cols_saved).reshape(kernel.data.shape)
        if x.requires_grad:
            gcols = (gmat @ kmat).reshape(n, ho, wo, cin, kh, kw)
            hp, wp = h + 2 * padding, w + 2 * padding
            gxp = np.zeros((n, hp, wp, cin), dtype=x.data.dtype)  # NHWC accumulation
            for u in range(kh):
                for v in range(kw):
                    gxp[:, u : u + ho * stride : stride, v : v + wo * stride : stride, :] += gcols[
                        :, :, :, :, u, v
                    ]
            gxc = gxp[:, padding : padding + h, padding : padding + w, :]
            gx = np.ascontiguousarray(gxc.transpose(0, 3, 1, 2))
        return (gx, gk, gb)

    return _make(out, (x, kernel, bias), bw)


def instance_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-(sample, channel) spatial standardization followed by affine scale/shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.data.ndim != 4:
        raise InvalidArgumentError(f"instance_norm2d: input must be NCHW, got {x.data.shape}")
    n, c, h, w = x.data.shape
    if h * w < 2:
        raise InvalidArgumentError(
            f"instance_norm2d: spatial size {h}x{w} too small for a variance"
        )
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise InvalidArgumentError(
            f"instance_norm2d: gamma/beta must have shape ({c},), got "
            f"{gamma.data.shape}/{beta.data.shape}"
        )
    m = h * w
    dt = x.data.dtype
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=dt))
    xhat = xc * inv
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def bw(g):
        ggamma = gbeta = gx = None
        if gamma.requires_grad:
            ggamma = (g * xhat).sum(axis=(0, 2, 3)).astype(dt, copy=False)
        if beta.requires_grad:
            gbeta = g.sum(axis=(0, 2, 3)).astype(dt, copy=False)
        if x.requires_grad:
            gh = g * gamma.data[None, :, None, None]
            s1 = gh.sum(axis=(2, 3), keepdims=True)
            s2 = (gh * xhat).sum(axis=(2, 3), keepdims=True)
            gx = (inv / m) * (m * gh - s1 - xhat * s2)
        return (gx, ggamma, gbeta)

    return _make(out, (x, gamma, beta), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight + bias`` with weight laid out (in_dim, out_dim)."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise InvalidArgumentError(
            f"linear: expected 2-d operands, got {x.data.shape} and {weight.data.shape}"
        )
    if x.data.shape[1] != weight.data.shape[0]:
        raise InvalidArgumentError(
            f"linear: inner dims disagree, x has {x.data.shape[1]}, weight has "
            f"{weight.data.shape[0]}"
        )
    if bias.data.shape != (weight.data.shape[1],):
        raise InvalidArgumentError(
            f"linear: bias shape {bias.data.shape} != ({weight.data.shape[1]},)"
        )
    out = x.data @ weight.data + bias.data[None, :]

    def bw(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.T @ g if weight.requires_grad else None
        gb = g.sum(axis=0, dtype=np.float64).astype(bias.data.dtype) if bias.requires_grad else None
        return (gx, gw, gb)

    return _make(out, (x, weight, bias), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes of an NCHW tensor, yielding (N, C)."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise InvalidArgumentError(f"global_avg_pool: input must be NCHW, got {x.data.shape}")
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3))

    def bw(g):
        gx = np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape)
        return (gx.astype(x.data.dtype, copy=True),)

    return _make(out, (x,), bw)


# ---------------------------------------------------------------------------
# losses


def _stable_sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(logit: Tensor, label, reduction: str = "mean") -> Tensor:
    """Binary cross-entropy on raw logits, overflow-safe for |z| up to ~1e4.

    ``label`` entries must be exactly 0 or 1.  ``reduction`` is "mean" (the
    scalar loss), "sum", or "none" (per-element losses, same shape as input).
    """
    logit = _as_tensor(logit)
    y = np.asarray(label.data if isinstance(label, Tensor) else label, dtype=logit.data.dtype)
    if y.shape != logit.data.shape:
        raise InvalidArgumentError(
            f"bce_with_logits: label shape {y.shape} != logit shape {logit.data.shape}"
        )
    if not np.all((y == 0) | (y == 1)):
        raise InvalidArgumentError("bce_with_logits: labels must be exactly 0 or 1")
    if reduction not in ("mean", "sum", "none"):
        raise InvalidArgumentError(f"bce_with_logits: unknown reduction {reduction!r}")
    z = logit.data
    elems = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    if reduction == "none":
        out = elems
        scale = 1.0
    elif reduction == "sum":
        out = np.asarray(elems.sum(dtype=np.float64), dtype=z.dtype)
        scale = 1.0
    else:
        out = np.asarray(elems.mean(dtype=np.float64), dtype=z.dtype)
        scale = 1.0 / z.size

    def bw(g):
        base = (_stable_sigmoid(z) - y) * scale
        return ((g * base).astype(z.dtype, copy=False),)

    return _make(out, (logit,), bw)


def hinge_multibit(logits: Tensor, code, reduction: str = "mean") -> Tensor:
    """Per-bit hinge loss max(0, 1 - t*z) against a {0,1} bit code.

    ``code`` has the same shape as ``logits``; bit b maps to target 2b - 1.
    """
    logits = _as_tensor(logits)
    c = np.asarray(code.data if isinstance(code, Tensor) else code, dtype=logits.data.dtype)
    if c.shape != logits.data.shape:
        raise InvalidArgumentError(
            f"hinge_multibit: code shape {c.shape} != logits shape {logits.data.shape}"
        )
    if not np.all((c == 0) | (c == 1)):
        raise InvalidArgumentError("hinge_multibit: code entries must be exactly 0 or 1")
    if reduction not in ("mean", "sum", "none"):
        raise InvalidArgumentError(f"hinge_multibit: unknown reduction {reduction!r}")
    z = logits.data
    t = 2.0 * c - 1.0
    margin = 1.0 - t * z
    active = margin > 0
    elems = np.where(active, margin, 0).astype(z.dtype)
    if reduction == "none":
        out = elems
        scale = 1.0
    elif reduction == "sum":
        out = np.asarray(elems.sum(dtype=np.float64), dtype=z.dtype)
        scale = 1.0
    else:
        out = np.asarray(elems.mean(dtype=np.float64), dtype=z.dtype)
        scale = 1.0 / z.size

    def bw(g):
        return ((g * (-t * active) * scale).astype(z.dtype, copy=False),)

    return _make(out, (logits,), bw)


# ---------------------------------------------------------------------------
# sampling / structural primitives used by the signal transforms


def flip_w(x: Tensor) -> Tensor:
    """Reverse the width (last) axis."""
    x = _as_tensor(x)
    out = np.ascontiguousarray(x.data[..., ::-1])

    def bw(g):
        return (np.ascontiguousarray(g[..., ::-1]),)

    return _make(out, (x,), bw)


def crop_spatial(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    """Slice a spatial window out of an (..., H, W) tensor."""
    x = _as_tensor(x)
    h, w = x.data.shape[-2], x.data.shape[-1]
    if top < 0 or left < 0 or top + height > h or left + width > w:
        raise InvalidArgumentError(
            f"crop_spatial: window {top}:{top + height} x {left}:{left + width} "
            f"outside {h}x{w}"
        )
    out = np.ascontiguousarray(x.data[..., top : top + height, left : left + width])

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[..., top : top + height, left : left + width] = g
        return (gx,)

    return _make(out, (x,), bw)


def grid_sample_bilinear(x: Tensor, src_y, src_x, fill_zero: bool) -> Tensor:
    """Bilinearly sample an (N, C, H, W) tensor at per-item source coordinates.

    ``src_y``/``src_x`` have shape (N, Ho, Wo) in input pixel coordinates.
    ``fill_zero``: out-of-range taps contribute 0 (rotation); otherwise
    coordinates are clamped to the edge (resize), so weights always sum to 1.
    The map is linear in ``x``; backward is the transposed scatter.
    """
    x = _as_tensor(x)
    n, c, h, w = x.data.shape
    dt = x.data.dtype
    src_y = np.asarray(src_y, dtype=dt)
    src_x = np.asarray(src_x, dtype=dt)
    ho, wo = src_y.shape[1], src_y.shape[2]

    if fill_zero:
        y0 = np.floor(src_y).astype(np.int64)
        x0 = np.floor(src_x).astype(np.int64)
    else:
        sy = np.clip(src_y, 0.0, h - 1.0)
        sx = np.clip(src_x, 0.0, w - 1.0)
        y0 = np.minimum(np.floor(sy).astype(np.int64), h - 2) if h > 1 else np.zeros_like(sy, np.int64)
        x0 = np.minimum(np.floor(sx).astype(np.int64), w - 2) if w > 1 else np.zeros_like(sx, np.int64)
        src_y, src_x = sy, sx
    y1 = y0 + 1
    x1 = x0 + 1
    dy = (src_y - y0).astype(dt)
    dx = (src_x - x0).astype(dt)

    weights = (
        ((1 - dy) * (1 - dx)),
        ((1 - dy) * dx),
        (dy * (1 - dx)),
        (dy * dx),
    )
    corners = ((y0, x0), (y0, x1), (y1, x0), (y1, x1))

    flat = x.data.reshape(n, c, h * w)
    out = np.zeros((n, c, ho * wo), dtype=dt)
    saved = []
    for (cy, cx), wgt in zip(corners, weights):
        if fill_zero:
            valid = (cy >= 0) & (cy < h) & (cx >= 0) & (cx < w)
            wgt = wgt * valid
            cy = np.clip(cy, 0, h - 1)
            cx = np.clip(cx, 0, w - 1)
        else:
            cy = np.clip(cy, 0, h - 1)
            cx = np.clip(cx, 0, w - 1)
        idx = (cy * w + cx).reshape(n, 1, ho * wo)
        wflat = wgt.reshape(n, 1, ho * wo)
        out += np.take_along_axis(flat, idx, axis=2) * wflat
        saved.append((idx, wflat))

    out = out.reshape(n, c, ho, wo)

    def bw(g):
        gv = g.reshape(n, c, ho * wo)
        plane = np.arange(n * c, dtype=np.int64)[:, None] * (h * w)
        acc = np.zeros(n * c * h * w, dtype=np.float64)
        for idx, wflat in saved:
            contrib = (gv * wflat).reshape(n * c, ho * wo)
            idx_b = np.broadcast_to(idx, (n, c, ho * wo)).reshape(n * c, ho * wo)
            acc += np.bincount(
                (idx_b + plane).ravel(), weights=contrib.ravel(), minlength=n * c * h * w
            )
        return (acc.reshape(n, c, h, w).astype(dt, copy=False),)

    return _make(out, (x,), bw)


def correlate1d_reflect(x: Tensor, kernel1d: np.ndarray, axis: int) -> Tensor:
    """Correlate along one axis with reflect padding (output size preserved).

    Used for separable Gaussian blur.  ``kernel1d`` is a plain (constant)
    array of odd length; the adjoint folds the padded gradient back through
    the reflection index map.
    """
    x = _as_tensor(x)
    k = np.asarray(kernel1d, dtype=x.data.dtype)
    r = (k.size - 1) // 2
    if k.size % 2 != 1:
        raise InvalidArgumentError("correlate1d_reflect: kernel length must be odd")
    if r == 0:
        return mul(x, float(k[0])) if k[0] != 1.0 else _make(x.data.copy(), (x,), lambda g: (g,))

    xm = np.moveaxis(x.data, axis, -1)
    length = xm.shape[-1]
    if length < 2:
        raise InvalidArgumentError("correlate1d_reflect: axis too short for reflect padding")
    idx = np.arange(-r, length + r)
    # reflect without repeating the edge sample: -1 -> 1, length -> length-2
    idx = np.abs(idx)
    idx = np.where(idx >= length, 2 * (length - 1) - idx, idx)
    xp = xm[..., idx]
    out = np.zeros_like(xm)
    for j in range(k.size):
        out += k[j] * xp[..., j : j + length]
    out = np.moveaxis(out, -1, axis)

    def bw(g):
        gm = np.moveaxis(g, axis, -1)
        gp = np.zeros(gm.shape[:-1] + (length + 2 * r,), dtype=gm.dtype)
        for j in range(k.size):
            gp[..., j : j + length] += k[j] * gm
        gx = np.zeros_like(gm)
        np.add.at(gx, (..., idx), gp)
        return (np.moveaxis(gx, -1, axis),)

    return _make(np.ascontiguousarray(out), (x,), bw)


# ---------------------------------------------------------------------------
# optimizer


def sgd_step(params, lr: float):
    """In-place ``p <- p - lr * grad(p)`` over a parameter list; grads are cleared."""
    for p in params:
        if p.grad is None:
            raise InvalidStateError("sgd_step: parameter has no gradient (missing backward?)")
    for p in params:
        p.data -= np.asarray(lr, dtype=p.data.dtype) * p.grad
        p.grad = None


def zero_grads(params):
    for p in params:
        p.grad = None


@contextmanager
def frozen(params):
    """Temporarily stop tracking gradients for ``params`` (single-threaded use)."""
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, s in zip(params, saved):
            p.requires_grad = s
