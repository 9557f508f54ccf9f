"""Watermark construction via projected gradient descent.

A watermark is an additive perturbation, bounded in l-infinity norm, that
drives the detector's logit toward the watermarked label.  Embedding runs
signed-gradient descent steps on the detection loss, projecting back into the
epsilon-ball intersected with the [0, 1] value box after each step.  The
ensemble variant additionally pushes a set of other detectors toward the
clean label so the watermark does not transfer to them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ag
from . import transforms as tf
from .autodiff import Tensor
from .detector import DetectorModel, forward_logits, predict
from .errors import InvalidArgumentError, InvalidStateError


@dataclass(frozen=True)
class WatermarkConfig:
    """Embedding budget and schedule.

    ``step_size`` defaults to 2.5 * epsilon / steps, which reaches the ball
    boundary with room to explore.  ``transform_samples`` controls how many
    transform instances are drawn per PGD step when a pipeline is supplied
    (0 means the pipeline is ignored).
    """

    epsilon: float = 20.0 / 255.0
    steps: int = 5
    step_size: float = None
    transform_samples: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidArgumentError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.steps < 0:
            raise InvalidArgumentError(f"steps must be >= 0, got {self.steps}")
        if self.transform_samples < 0:
            raise InvalidArgumentError(
                f"transform_samples must be >= 0, got {self.transform_samples}"
            )
        if self.step_size is None:
            size = 2.5 * self.epsilon / self.steps if self.steps > 0 else 0.0
            object.__setattr__(self, "step_size", size)
        elif self.steps > 0 and self.step_size <= 0 and self.epsilon > 0:
            raise InvalidArgumentError(f"step_size must be > 0, got {self.step_size}")

    def with_epsilon(self, epsilon: float) -> "WatermarkConfig":
        size = 2.5 * epsilon / self.steps if self.steps > 0 else 0.0
        return replace(self, epsilon=epsilon, step_size=size)


def project_linf(x, center, epsilon: float):
    """Clamp ``x`` into the epsilon-ball around ``center``, intersected with [0, 1]."""
    x_arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    c_arr = center.data if isinstance(center, Tensor) else np.asarray(center)
    if x_arr.shape != c_arr.shape:
        raise InvalidArgumentError(
            f"project_linf: shapes differ, {x_arr.shape} vs {c_arr.shape}"
        )
    eps = np.asarray(epsilon, dtype=x_arr.dtype)
    lo = np.maximum(c_arr - eps, 0.0)
    hi = np.minimum(c_arr + eps, 1.0)
    out = np.minimum(np.maximum(x_arr, lo), hi)
    if isinstance(x, Tensor):
        return Tensor(out, dtype=out.dtype)
    return out


def _batchify(s):
    arr = s.data if isinstance(s, Tensor) else np.asarray(s)
    dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
    arr = np.asarray(arr, dtype=dtype)
    if arr.ndim == 3:
        return arr[None], True
    if arr.ndim != 4:
        raise InvalidArgumentError(f"signal must have 3 or 4 dims, got {arr.ndim}")
    return arr, False


def _unbatchify(arr, was_3d, like):
    out = arr[0] if was_3d else arr
    if isinstance(like, Tensor):
        return Tensor(out, dtype=out.dtype)
    return out


def _check_pipe_trainable(pipe):
    if pipe is None:
        return
    for spec in pipe.specs:
        if not spec.differentiable:
            raise InvalidStateError(
                f"transform {spec.kind!r} is evaluation-only and cannot appear in "
                "the embedding gradient path"
            )


def _assert_ball(s_hat, s, epsilon):
    delta = np.abs(s_hat - s).max() if s_hat.size else 0.0
    if delta > epsilon + 1e-6 or (s_hat.size and (s_hat.min() < 0 or s_hat.max() > 1)):
        raise AssertionError(
            f"embedding left the feasible set: max|delta|={delta}, eps={epsilon}"
        )


def _per_sample_bce(model, x, label_value):
    logits = forward_logits(model, x)
    labels = np.full(logits.data.shape, label_value, dtype=logits.data.dtype)
    return ag.bce_with_logits(logits, labels, reduction="none")


def _pgd_loop(s_arr, cfg, pipe, rng, loss_vec_fn):
    """Shared PGD driver: signed steps on a per-sample loss, projected each step.

    ``loss_vec_fn(x, instances)`` returns the per-sample loss column to descend.
    Transform instances are resampled at every step.
    """
    s_hat = s_arr.copy()
    n_inst = cfg.transform_samples if pipe is not None else 0
    for _ in range(cfg.steps):
        x = Tensor(s_hat, requires_grad=True, dtype=s_hat.dtype)
        if n_inst > 0:
            instances = [
                tf.sample_pipeline_instance(pipe, s_hat.shape, rng) for _ in range(n_inst)
            ]
        else:
            instances = [None]
        loss_vec = loss_vec_fn(x, instances)
        total = ag.sum_all(loss_vec)
        ag.backward(total)
        s_hat = s_hat - np.asarray(cfg.step_size, dtype=s_hat.dtype) * np.sign(x.grad)
        s_hat = np.minimum(
            np.maximum(s_hat, np.maximum(s_arr - cfg.epsilon, 0.0)),
            np.minimum(s_arr + cfg.epsilon, 1.0),
        ).astype(s_hat.dtype)
    return s_hat


def _max_over(losses):
    out = losses[0]
    for other in losses[1:]:
        out = ag.maximum(out, other)
    return out


def pgd_embed(model: DetectorModel, s, cfg: WatermarkConfig, pipe=None, rng=None):
    """Embed a zero-bit watermark into ``s`` (a signal or a batch of signals).

    With a pipeline and ``cfg.transform_samples`` > 0, each step descends the
    worst (highest) loss over freshly sampled transform instances, so the
    watermark survives the transform distribution rather than a single draw.
    """
    if model.is_multibit:
        raise InvalidArgumentError("pgd_embed expects a zero-bit detector")
    _check_pipe_trainable(pipe)
    arr, was_3d = _batchify(s)
    if cfg.epsilon == 0.0 or cfg.steps == 0:
        return _unbatchify(arr.copy(), was_3d, s)
    rng = np.random.default_rng(np.random.PCG64(cfg.seed)) if rng is None else rng

    def loss_vec(x, instances):
        losses = []
        for inst in instances:
            xt = x if inst is None else tf.apply_pipeline_instance(inst, x)
            losses.append(_per_sample_bce(model, xt, 1.0))
        return _max_over(losses)

    with ag.frozen(model.param_list()):
        s_hat = _pgd_loop(arr, cfg, pipe, rng, loss_vec)
    _assert_ball(s_hat, arr, cfg.epsilon)
    return _unbatchify(s_hat, was_3d, s)


def pgd_embed_ensemble(
    target: DetectorModel,
    ensemble,
    s,
    cfg: WatermarkConfig,
    pipe=None,
    rng=None,
    ensemble_reduce: str = "max",
):
    """Embed against ``target`` while staying undetected by ``ensemble`` members.

    The descended objective adds, to the usual watermarked-label loss on the
    target, the worst clean-label loss over ensemble members (and transform
    instances).  ``ensemble_reduce="sum"`` replaces the max over members with
    their sum.
    """
    if target.is_multibit:
        raise InvalidArgumentError("pgd_embed_ensemble expects a zero-bit detector")
    ensemble = list(ensemble)
    if not ensemble:
        raise InvalidArgumentError("pgd_embed_ensemble needs a non-empty ensemble")
    if any(m.config.input_shape != target.config.input_shape for m in ensemble):
        raise InvalidArgumentError("ensemble members must share the target input shape")
    if ensemble_reduce not in ("max", "sum"):
        raise InvalidArgumentError(f"unknown ensemble_reduce {ensemble_reduce!r}")
    _check_pipe_trainable(pipe)
    arr, was_3d = _batchify(s)
    if cfg.epsilon == 0.0 or cfg.steps == 0:
        return _unbatchify(arr.copy(), was_3d, s)
    rng = np.random.default_rng(np.random.PCG64(cfg.seed)) if rng is None else rng

    def loss_vec(x, instances):
        pos_losses = []
        neg_losses = []
        for inst in instances:
            xt = x if inst is None else tf.apply_pipeline_instance(inst, x)
            pos_losses.append(_per_sample_bce(target, xt, 1.0))
            for member in ensemble:
                neg_losses.append(_per_sample_bce(member, xt, 0.0))
        pos = _max_over(pos_losses)
        if ensemble_reduce == "max":
            neg = _max_over(neg_losses)
        else:
            neg = neg_losses[0]
            for other in neg_losses[1:]:
                neg = ag.add(neg, other)
        return ag.add(pos, neg)

    all_params = target.param_list()
    for member in ensemble:
        all_params += member.param_list()
    with ag.frozen(all_params):
        s_hat = _pgd_loop(arr, cfg, pipe, rng, loss_vec)
    _assert_ball(s_hat, arr, cfg.epsilon)
    return _unbatchify(s_hat, was_3d, s)


def embed_multibit(model: DetectorModel, s, code, cfg: WatermarkConfig, rng=None):
    """Embed an n-bit code by descending the hinge loss of the n-logit detector."""
    arr, was_3d = _batchify(s)
    codes = np.asarray(code)
    if codes.ndim == 1:
        codes = np.broadcast_to(codes, (arr.shape[0], codes.shape[0]))
    if codes.shape[1] != model.config.head_dim:
        raise InvalidArgumentError(
            f"code length {codes.shape[1]} != detector head_dim {model.config.head_dim}"
        )
    if codes.shape[0] != arr.shape[0]:
        raise InvalidArgumentError(
            f"got {codes.shape[0]} codes for {arr.shape[0]} signals"
        )
    if cfg.epsilon == 0.0 or cfg.steps == 0:
        return _unbatchify(arr.copy(), was_3d, s)
    rng = np.random.default_rng(np.random.PCG64(cfg.seed)) if rng is None else rng
    codes = codes.astype(np.float64)

    def loss_vec(x, instances):
        logits = forward_logits(model, x)
        return ag.hinge_multibit(logits, codes.astype(logits.data.dtype), reduction="none")

    with ag.frozen(model.param_list()):
        s_hat = _pgd_loop(arr, cfg, None, rng, loss_vec)
    _assert_ball(s_hat, arr, cfg.epsilon)
    return _unbatchify(s_hat, was_3d, s)


def detect_zero_bit(model: DetectorModel, s, threshold: float = 0.0):
    """Detector decision for one signal (or per-row decisions for a batch)."""
    arr, was_3d = _batchify(s)
    labels = predict(model, arr, threshold=threshold)
    return int(labels[0]) if was_3d else labels


def decode_multibit(model: DetectorModel, s) -> np.ndarray:
    """Recover the bit code: bit j is 1 iff logit j is positive."""
    if not model.is_multibit:
        raise InvalidArgumentError(
            "decode_multibit expects a multi-bit detector; use predict/detect_zero_bit"
        )
    arr, was_3d = _batchify(s)
    with ag.no_grad():
        logits = forward_logits(model, arr)
    bits = (logits.data > 0).astype(np.int64)
    return bits[0] if was_3d else bits
