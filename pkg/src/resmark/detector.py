"""Convolutional watermark detector.

A compact stack of [conv -> instance norm -> relu] blocks followed by global
average pooling and a linear head.  ``head_dim == 1`` gives the zero-bit
detector (one logit, watermarked vs. clean); ``head_dim == n`` gives the
multi-bit decoder (one logit per message bit).  Batch statistics are never
used: instance normalization keeps each sample self-normalized, which is what
makes the detector stable under aggressive input transformations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ag
from .autodiff import Tensor
from .errors import InvalidArgumentError


@dataclass(frozen=True)
class DetectorConfig:
    """Architecture hyperparameters; parameter shapes follow from these alone."""

    input_shape: tuple = (3, 32, 32)
    channel_widths: tuple = (16, 32, 64)
    kernel_size: int = 3
    strides: tuple = (1, 2, 2)
    head_dim: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "channel_widths", tuple(int(v) for v in self.channel_widths))
        object.__setattr__(self, "strides", tuple(int(v) for v in self.strides))
        if len(self.input_shape) != 3 or any(v < 1 for v in self.input_shape):
            raise InvalidArgumentError(f"input_shape must be (C, H, W), got {self.input_shape}")
        if len(self.channel_widths) != len(self.strides):
            raise InvalidArgumentError(
                f"channel_widths ({len(self.channel_widths)}) and strides "
                f"({len(self.strides)}) must have equal length"
            )
        if not self.channel_widths:
            raise InvalidArgumentError("at least one conv block is required")
        if self.kernel_size < 1:
            raise InvalidArgumentError(f"kernel_size must be >= 1, got {self.kernel_size}")
        if any(s < 1 for s in self.strides):
            raise InvalidArgumentError(f"strides must be >= 1, got {self.strides}")
        if self.head_dim < 1:
            raise InvalidArgumentError(f"head_dim must be >= 1, got {self.head_dim}")

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "channel_widths": list(self.channel_widths),
            "kernel_size": self.kernel_size,
            "strides": list(self.strides),
            "head_dim": self.head_dim,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        return cls(
            input_shape=tuple(d["input_shape"]),
            channel_widths=tuple(d["channel_widths"]),
            kernel_size=int(d["kernel_size"]),
            strides=tuple(d["strides"]),
            head_dim=int(d["head_dim"]),
            seed=int(d["seed"]),
        )


@dataclass
class DetectorModel:
    """A detector's configuration plus its named, ordered parameters."""

    config: DetectorConfig
    params: dict = field(repr=False)  # name -> Tensor, insertion-ordered

    def param_list(self):
        return list(self.params.values())

    @property
    def is_multibit(self) -> bool:
        return self.config.head_dim > 1


def parameter_count(config: DetectorConfig) -> int:
    """Total scalar parameter count implied by a config."""
    k = config.kernel_size
    total = 0
    cin = config.input_shape[0]
    for width in config.channel_widths:
        total += width * cin * k * k + width + 2 * width  # kernel + bias + gamma/beta
        cin = width
    total += cin * config.head_dim + config.head_dim
    return total


def build_detector(config: DetectorConfig) -> DetectorModel:
    """Deterministically initialize a detector from its config seed.

    Conv kernels and the head weight are He-uniform (bound sqrt(6 / fan_in));
    biases start at 0, instance-norm scales at 1 and shifts at 0.
    """
    rng = np.random.default_rng(np.random.PCG64(config.seed))
    params: dict = {}
    k = config.kernel_size
    cin = config.input_shape[0]
    for i, width in enumerate(config.channel_widths):
        fan_in = cin * k * k
        bound = np.sqrt(6.0 / fan_in)
        kernel = rng.uniform(-bound, bound, size=(width, cin, k, k))
        params[f"block{i}.kernel"] = Tensor(kernel, requires_grad=True)
        params[f"block{i}.bias"] = Tensor(np.zeros(width), requires_grad=True)
        params[f"block{i}.gamma"] = Tensor(np.ones(width), requires_grad=True)
        params[f"block{i}.beta"] = Tensor(np.zeros(width), requires_grad=True)
        cin = width
    bound = np.sqrt(6.0 / cin)
    params["head.weight"] = Tensor(
        rng.uniform(-bound, bound, size=(cin, config.head_dim)), requires_grad=True
    )
    params["head.bias"] = Tensor(np.zeros(config.head_dim), requires_grad=True)
    return DetectorModel(config=config, params=params)


def forward_logits(model: DetectorModel, batch) -> Tensor:
    """Run the detector on an (N, C, H, W) batch, returning (N, head_dim) logits."""
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    cfg = model.config
    if x.data.ndim != 4 or tuple(x.data.shape[1:]) != cfg.input_shape:
        raise InvalidArgumentError(
            f"forward_logits: batch shape {tuple(x.data.shape)} does not match "
            f"(N, {cfg.input_shape[0]}, {cfg.input_shape[1]}, {cfg.input_shape[2]})"
        )
    pad = cfg.kernel_size // 2
    for i, stride in enumerate(cfg.strides):
        x = ag.conv2d(
            x,
            model.params[f"block{i}.kernel"],
            model.params[f"block{i}.bias"],
            stride=stride,
            padding=pad,
        )
        x = ag.instance_norm2d(x, model.params[f"block{i}.gamma"], model.params[f"block{i}.beta"])
        x = ag.relu(x)
    x = ag.global_avg_pool(x)
    return ag.linear(x, model.params["head.weight"], model.params["head.bias"])


def predict(model: DetectorModel, batch, threshold: float = 0.0) -> np.ndarray:
    """Zero-bit decisions per batch row: 1 iff logit > threshold.

    Exactly-at-threshold ties resolve to 0 (not watermarked).
    """
    if model.is_multibit:
        raise InvalidArgumentError(
            "predict expects a zero-bit detector; use decode_multibit for "
            f"head_dim={model.config.head_dim}"
        )
    with ag.no_grad():
        logits = forward_logits(model, batch)
    return (logits.data[:, 0] > threshold).astype(np.int64)


def clone_model(model: DetectorModel) -> DetectorModel:
    """Deep copy of config and parameters (gradients are not copied)."""
    params = {
        name: Tensor(p.data.copy(), requires_grad=p.requires_grad, dtype=p.data.dtype)
        for name, p in model.params.items()
    }
    return DetectorModel(config=model.config, params=params)
