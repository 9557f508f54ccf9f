"""Minimax training of the watermark detector.

Each step alternates the two halves of the saddle problem: first the inner
minimization constructs a watermarked batch against the current detector
(PGD, parameters frozen), then the detector parameters descend the detection
loss on transformed watermarked/clean pairs.  The same sampled transform
instance is applied to a watermarked signal and to its clean counterpart, and
with several instances per step the per-sample worst case is descended.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ag
from . import transforms as tf
from .autodiff import Tensor
from .detector import DetectorModel, forward_logits
from .embedder import WatermarkConfig, embed_multibit, pgd_embed, pgd_embed_ensemble
from .errors import InvalidArgumentError

_ACC_WINDOW = 100  # moving-average horizon for reported accuracy


@dataclass(frozen=True)
class AdaptiveEpsilon:
    """Shrink epsilon by ``delta`` whenever the recent detection rate is perfect."""

    delta: float = 1e-5
    window: int = 100


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 0.05
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 0  # 0 disables decay
    wm: WatermarkConfig = field(default_factory=WatermarkConfig)
    pipe: tf.TransformPipeline = None
    transform_samples: int = 1
    adaptive_epsilon: AdaptiveEpsilon = None
    momentum: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise InvalidArgumentError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.transform_samples < 1:
            raise InvalidArgumentError(
                f"transform_samples must be >= 1, got {self.transform_samples}"
            )
        if self.lr <= 0:
            raise InvalidArgumentError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidArgumentError(f"momentum must lie in [0, 1), got {self.momentum}")


@dataclass
class TrainReport:
    """Per-step training traces plus the final held-out accuracy."""

    losses: list = field(default_factory=list)
    accuracy_ma: list = field(default_factory=list)
    epsilons: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)
    final_test_accuracy: float = None
    final_epsilon: float = None

    def rows(self):
        """Report rows for CSV emission (wall-clock stays in memory only,
        so seeded reruns serialize identically)."""
        for t, (loss, acc, eps) in enumerate(
            zip(self.losses, self.accuracy_ma, self.epsilons)
        ):
            yield {"step": t, "loss": loss, "accuracy_ma": acc, "epsilon": eps}


def effective_lr(cfg: TrainConfig, step: int) -> float:
    if cfg.lr_decay_every <= 0:
        return cfg.lr
    return cfg.lr * cfg.lr_decay_factor ** (step // cfg.lr_decay_every)


def _update_params(model: DetectorModel, lr: float, momentum: float, velocity: dict):
    params = model.param_list()
    if momentum == 0.0:
        ag.sgd_step(params, lr)
        return
    for name, p in model.params.items():
        if p.grad is None:
            raise InvalidArgumentError(f"parameter {name} has no gradient")
        v = velocity.get(name)
        v = p.grad if v is None else momentum * v + p.grad
        velocity[name] = v
        p.data -= np.asarray(lr, dtype=p.data.dtype) * v
        p.grad = None


def _max_over(losses):
    out = losses[0]
    for other in losses[1:]:
        out = ag.maximum(out, other)
    return out


def _zero_bit_losses(model, s_hat, clean, pipe, n_samples, rng):
    """Per-sample pair losses (watermarked->1 plus clean->0, halved), worst
    case over ``n_samples`` shared transform instances; plus batch stats.

    Returns a scalar-ready loss tensor: a (N, 1) per-sample column to average
    when n_samples > 1, or the already-reduced scalar for the fused one-sample
    fast path.  Each instance is applied identically to the watermarked batch
    and its clean counterpart (stacked into one forward pass when possible).
    """
    n = clean.shape[0]
    if n_samples == 1:
        # mean over 2N element losses == mean over N of (pos + neg) / 2
        both = np.concatenate([s_hat, clean], axis=0)
        if pipe is not None:
            inst = tf.sample_pipeline_instance(pipe, clean.shape, rng)
            orig = Tensor(np.concatenate([clean, clean], axis=0))
            xt = tf.apply_pipeline_instance(
                tf.tile_instance(inst, 2), Tensor(both), original=orig
            )
        else:
            xt = Tensor(both)
        logits = forward_logits(model, xt)
        labels = np.zeros(logits.data.shape, dtype=logits.data.dtype)
        labels[:n] = 1.0
        loss = ag.bce_with_logits(logits, labels, reduction="mean")
        det_rate = float((logits.data[:n, 0] > 0).mean()) if n else 0.0
        clean_rate = float((logits.data[n:, 0] <= 0).mean()) if n else 0.0
        return loss, (det_rate, clean_rate)

    losses = []
    stats = None
    for i in range(n_samples):
        if pipe is not None:
            inst = tf.sample_pipeline_instance(pipe, clean.shape, rng)
            xt_pos = tf.apply_pipeline_instance(inst, Tensor(s_hat), original=Tensor(clean))
            xt_neg = tf.apply_pipeline_instance(inst, Tensor(clean), original=Tensor(clean))
        else:
            xt_pos, xt_neg = Tensor(s_hat), Tensor(clean)
        lg_pos = forward_logits(model, xt_pos)
        lg_neg = forward_logits(model, xt_neg)
        ones = np.ones(lg_pos.data.shape, dtype=lg_pos.data.dtype)
        zeros = np.zeros(lg_neg.data.shape, dtype=lg_neg.data.dtype)
        lp = ag.bce_with_logits(lg_pos, ones, reduction="none")
        ln = ag.bce_with_logits(lg_neg, zeros, reduction="none")
        losses.append(ag.mul(ag.add(lp, ln), 0.5))
        if i == 0:
            det_rate = float((lg_pos.data[:, 0] > 0).mean()) if lg_pos.data.size else 0.0
            clean_rate = float((lg_neg.data[:, 0] <= 0).mean()) if lg_neg.data.size else 0.0
            stats = (det_rate, clean_rate)
    return ag.mean_all(_max_over(losses)), stats


def embedding_pipe(cfg: TrainConfig):
    """The differentiable part of the training pipeline, used inside the
    watermark construction.  Evaluation-only transforms stay out of the
    gradient path; they still preprocess the detector-update batch."""
    if cfg.pipe is None or cfg.wm.transform_samples == 0:
        return None
    diff_specs = tuple(s for s in cfg.pipe.specs if s.differentiable)
    if not diff_specs:
        return None
    if diff_specs == cfg.pipe.specs:
        return cfg.pipe
    return tf.TransformPipeline(specs=diff_specs, mode=cfg.pipe.mode, seed=cfg.pipe.seed)


def train_step(model: DetectorModel, clean_batch, cfg: TrainConfig, rng, lr=None) -> float:
    """One detector update on one clean batch; returns the loss value."""
    loss, _ = _train_step_impl(model, np.asarray(clean_batch), cfg, rng,
                               cfg.lr if lr is None else lr, {}, pgd_embed)
    return loss


def _train_step_impl(model, batch, cfg, rng, lr, velocity, embed_fn):
    wm = cfg.wm
    s_hat = embed_fn(model, batch, wm, pipe=embedding_pipe(cfg), rng=rng)
    s_hat = s_hat.data if isinstance(s_hat, Tensor) else s_hat
    ag.zero_grads(model.param_list())
    loss, stats = _zero_bit_losses(
        model, s_hat, batch, cfg.pipe, cfg.transform_samples, rng
    )
    ag.backward(loss)
    _update_params(model, lr, cfg.momentum, velocity)
    return float(loss.data), stats


def _shuffle_order(seed: int, epoch: int, count: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0, epoch)))
    return rng.permutation(count)


def _step_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))


def _validate_signals(signals) -> np.ndarray:
    arr = np.asarray(signals, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[0] == 0:
        raise InvalidArgumentError(
            f"dataset must be a non-empty (N, C, H, W) array, got shape {arr.shape}"
        )
    return arr


def _run_training(model, signals, cfg, embed_fn, step_fn, test_eval=None, progress=None):
    signals = _validate_signals(signals)
    report = TrainReport()
    velocity: dict = {}
    rng = _step_rng(cfg.seed)
    eps = cfg.wm.epsilon
    acc_window = deque(maxlen=_ACC_WINDOW)
    det_window = deque(maxlen=cfg.adaptive_epsilon.window) if cfg.adaptive_epsilon else None
    count = signals.shape[0]
    batch = min(cfg.batch_size, count)
    steps_per_epoch = max(count // batch, 1)
    order = None
    t0 = time.perf_counter()
    for t in range(cfg.steps):
        epoch, pos = divmod(t, steps_per_epoch)
        if pos == 0:
            order = _shuffle_order(cfg.seed, epoch, count)
        idx = order[pos * batch : pos * batch + batch]
        cfg_t = cfg if eps == cfg.wm.epsilon else replace(cfg, wm=cfg.wm.with_epsilon(eps))
        loss, (det_rate, clean_rate) = step_fn(
            model, signals[idx], cfg_t, rng, effective_lr(cfg, t), velocity, embed_fn
        )
        acc_window.append(0.5 * (det_rate + clean_rate))
        report.losses.append(loss)
        report.accuracy_ma.append(float(np.mean(acc_window)))
        report.epsilons.append(eps)
        report.wall_clock.append(time.perf_counter() - t0)
        if det_window is not None:
            det_window.append(det_rate)
            if len(det_window) == det_window.maxlen and min(det_window) >= 1.0:
                eps = max(eps - cfg.adaptive_epsilon.delta, 0.0)
        if progress is not None:
            progress(t, loss, report.accuracy_ma[-1])
    report.final_epsilon = eps
    if test_eval is not None:
        report.final_test_accuracy = test_eval(model, cfg.wm.with_epsilon(eps))
    return model, report


def evaluate_zero_bit_accuracy(model, test_signals, wm_cfg, pipe=None, chunk: int = 256) -> float:
    """Held-out clean-vs-watermarked accuracy: every test signal is scored
    once clean (label 0) and once freshly watermarked (label 1).  ``pipe``
    makes the embedding sample transforms, matching how training built
    watermarks."""
    from .detector import predict  # local import keeps module load light

    test_signals = _validate_signals(test_signals)
    correct = 0
    total = 0
    for lo in range(0, test_signals.shape[0], chunk):
        part = test_signals[lo : lo + chunk]
        s_hat = pgd_embed(model, part, wm_cfg, pipe=pipe)
        correct += int((predict(model, s_hat) == 1).sum())
        correct += int((predict(model, part) == 0).sum())
        total += 2 * part.shape[0]
    return correct / total


def train(model: DetectorModel, train_signals, cfg: TrainConfig, test_signals=None,
          progress=None):
    """Run the full minimax loop; returns (model, TrainReport)."""
    test_eval = None
    if test_signals is not None:
        test_eval = lambda m, wm: evaluate_zero_bit_accuracy(
            m, test_signals, wm, pipe=embedding_pipe(cfg)
        )
    return _run_training(
        model, train_signals, cfg, pgd_embed, _train_step_impl, test_eval, progress
    )


def train_ensemble(count: int, det_config, train_cfg: TrainConfig, dataset, seeds):
    """Train ``count`` detectors that differ only in weight initialization."""
    from .detector import build_detector

    seeds = list(seeds)
    if count != len(seeds):
        raise InvalidArgumentError(f"count ({count}) != number of seeds ({len(seeds)})")
    if len(set(seeds)) != len(seeds):
        raise InvalidArgumentError("ensemble seeds must be distinct")
    models = []
    for seed in seeds:
        cfg_i = replace(det_config, seed=seed)
        model, _ = train(build_detector(cfg_i), dataset, train_cfg)
        models.append(model)
    return models


def train_specificity_hardened(model: DetectorModel, ensemble, dataset,
                               cfg: TrainConfig, test_signals=None, progress=None):
    """Train with watermarks built against a frozen ensemble, so the fitted
    detector's watermarks do not transfer to similarly trained detectors."""
    ensemble = list(ensemble)
    if not ensemble:
        raise InvalidArgumentError("train_specificity_hardened needs a non-empty ensemble")

    def embed_fn(m, batch, wm, pipe=None, rng=None):
        return pgd_embed_ensemble(m, ensemble, batch, wm, pipe=pipe, rng=rng)

    test_eval = None
    if test_signals is not None:
        test_eval = lambda m, wm: evaluate_zero_bit_accuracy(m, test_signals, wm)
    model, report = _run_training(
        model, dataset, cfg, embed_fn, _train_step_impl, test_eval, progress
    )
    return model


def _multibit_step_impl(model, batch, cfg, rng, lr, velocity, embed_fn):
    n_bits = model.config.head_dim
    codes = rng.integers(0, 2, size=(batch.shape[0], n_bits))
    s_hat = embed_fn(model, batch, codes, cfg.wm, rng=rng)
    ag.zero_grads(model.param_list())
    losses = []
    stats = None
    bit_mean_w = np.full((n_bits, 1), 1.0 / n_bits)
    for i in range(cfg.transform_samples):
        if cfg.pipe is not None:
            inst = tf.sample_pipeline_instance(cfg.pipe, batch.shape, rng)
            xt = tf.apply_pipeline_instance(inst, Tensor(s_hat), original=Tensor(batch))
        else:
            xt = Tensor(s_hat)
        logits = forward_logits(model, xt)
        if cfg.transform_samples == 1:
            losses.append(ag.hinge_multibit(logits, codes.astype(logits.data.dtype)))
        else:
            per_bit = ag.hinge_multibit(
                logits, codes.astype(logits.data.dtype), reduction="none"
            )
            losses.append(ag.linear(per_bit, Tensor(bit_mean_w, dtype=per_bit.data.dtype),
                                    Tensor(np.zeros(1), dtype=per_bit.data.dtype)))
        if i == 0:
            bit_acc = float(((logits.data > 0) == codes).mean())
            stats = (bit_acc, bit_acc)
    loss = losses[0] if cfg.transform_samples == 1 else ag.mean_all(_max_over(losses))
    ag.backward(loss)
    _update_params(model, lr, cfg.momentum, velocity)
    return float(loss.data), stats


def evaluate_multibit_recovery(model, test_signals, wm_cfg, rng, chunk: int = 256) -> float:
    """Mean fraction of correctly decoded bits over fresh random codes."""
    from .embedder import decode_multibit

    test_signals = _validate_signals(test_signals)
    n_bits = model.config.head_dim
    match = 0
    total = 0
    for lo in range(0, test_signals.shape[0], chunk):
        part = test_signals[lo : lo + chunk]
        codes = rng.integers(0, 2, size=(part.shape[0], n_bits))
        s_hat = embed_multibit(model, part, codes, wm_cfg)
        decoded = decode_multibit(model, s_hat)
        match += int((decoded == codes).sum())
        total += codes.size
    return match / total


def train_multibit(model: DetectorModel, dataset, cfg: TrainConfig, test_signals=None,
                   progress=None):
    """Train the n-logit decoder on freshly embedded random codes per step."""
    if not model.is_multibit:
        raise InvalidArgumentError("train_multibit expects a multi-bit detector head")

    test_eval = None
    if test_signals is not None:
        eval_rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(2,)))
        test_eval = lambda m, wm: evaluate_multibit_recovery(m, test_signals, wm, eval_rng)
    model, report = _run_training(
        model, dataset, cfg, embed_multibit, _multibit_step_impl, test_eval, progress
    )
    return model, report
