"""Scikit-learn style front door to the watermarking toolkit.

``ZeroBitWatermarker`` learns a detector from a corpus of clean signals
(``fit``), embeds watermarks (``transform``) and flags watermarked inputs
(``predict``), so it slots into sklearn pipelines, grid search, and clone
semantics.  ``MultibitWatermarker`` does the same for n-bit message codes.

Signals are (N, C, H, W) float arrays in [0, 1]; flat (N, C*H*W) matrices are
accepted too when ``input_shape`` is given, which is how the estimators keep
compatibility with 2-d sklearn data flows.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .data import SynthDatasetSpec
from .detector import DetectorConfig, build_detector, predict
from .embedder import WatermarkConfig, decode_multibit, embed_multibit, pgd_embed
from .errors import InvalidArgumentError
from .trainer import TrainConfig, evaluate_zero_bit_accuracy, train, train_multibit
from .transforms import TransformPipeline, TransformSpec


def default_training_pipeline(seed: int = 0) -> TransformPipeline:
    """The standard composition the detector is hardened against."""
    return TransformPipeline(
        specs=(
            TransformSpec.gaussian_noise(0.25),
            TransformSpec.rotation(np.pi / 2),
            TransformSpec.crop(10, 10),
            TransformSpec.hflip(),
            TransformSpec.brightness(0.1),
        ),
        mode="composition",
        seed=seed,
    )


def check_signal_array(X, input_shape=None) -> np.ndarray:
    """Validate and normalize input signals to a float32 (N, C, H, W) array."""
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 2:
        if input_shape is None:
            raise InvalidArgumentError(
                "2-d input needs input_shape=(C, H, W) to recover signal geometry"
            )
        c, h, w = input_shape
        if arr.shape[1] != c * h * w:
            raise InvalidArgumentError(
                f"flat input has {arr.shape[1]} features, expected {c * h * w}"
            )
        arr = arr.reshape(arr.shape[0], c, h, w)
    if arr.ndim != 4:
        raise InvalidArgumentError(
            f"expected (N, C, H, W) or flat (N, D) signals, got shape {arr.shape}"
        )
    if input_shape is not None and tuple(arr.shape[1:]) != tuple(input_shape):
        raise InvalidArgumentError(
            f"signals have shape {tuple(arr.shape[1:])}, expected {tuple(input_shape)}"
        )
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise InvalidArgumentError("signal values must lie in [0, 1]")
    return arr


class _WatermarkerBase(TransformerMixin, BaseEstimator):
    def _fitted_model(self):
        model = getattr(self, "model_", None)
        if model is None:
            raise NotFittedError(
                f"{type(self).__name__} is not fitted yet; call fit(X) first"
            )
        return model

    def _flatten_like(self, out, X):
        return out.reshape(out.shape[0], -1) if np.asarray(X).ndim == 2 else out


class ZeroBitWatermarker(_WatermarkerBase):
    """Presence/absence watermarking: fit a detector, transform to embed,
    predict to detect."""

    def __init__(
        self,
        epsilon: float = 20.0 / 255.0,
        pgd_steps: int = 5,
        train_steps: int = 2000,
        batch_size: int = 32,
        lr: float = 0.1,
        momentum: float = 0.9,
        channel_widths: tuple = (16, 32, 64),
        strides: tuple = (1, 2, 2),
        kernel_size: int = 3,
        input_shape: tuple = None,
        pipeline="default",
        transform_samples: int = 1,
        seed: int = 0,
    ):
        self.epsilon = epsilon
        self.pgd_steps = pgd_steps
        self.train_steps = train_steps
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.channel_widths = channel_widths
        self.strides = strides
        self.kernel_size = kernel_size
        self.input_shape = input_shape
        self.pipeline = pipeline
        self.transform_samples = transform_samples
        self.seed = seed

    def _resolve_pipeline(self):
        """'default' selects the standard composition; None disables transforms."""
        if self.pipeline == "default":
            return default_training_pipeline(self.seed)
        return self.pipeline

    def _configs(self, input_shape):
        det = DetectorConfig(
            input_shape=input_shape,
            channel_widths=tuple(self.channel_widths),
            strides=tuple(self.strides),
            kernel_size=self.kernel_size,
            head_dim=1,
            seed=self.seed,
        )
        wm = WatermarkConfig(
            epsilon=self.epsilon, steps=self.pgd_steps, seed=self.seed,
            transform_samples=1 if self.pipeline is not None else 0,
        )
        pipe = self._resolve_pipeline()
        trn = TrainConfig(
            steps=self.train_steps,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            wm=wm,
            pipe=pipe,
            transform_samples=self.transform_samples,
            seed=self.seed,
        )
        return det, trn

    def fit(self, X, y=None):
        """Train the detector on clean signals (labels are not used: the
        positive class is synthesized by embedding during training)."""
        signals = check_signal_array(X, self.input_shape)
        det_cfg, train_cfg = self._configs(tuple(signals.shape[1:]))
        model, report = train(build_detector(det_cfg), signals, train_cfg)
        self.model_ = model
        self.report_ = report
        self.input_shape_ = tuple(signals.shape[1:])
        self.watermark_config_ = train_cfg.wm
        from .trainer import embedding_pipe

        self.embedding_pipe_ = embedding_pipe(train_cfg)
        return self

    def transform(self, X):
        """Embed a watermark into each signal (sampling the training
        transforms inside the embedding when the estimator was fitted with a
        pipeline, so the mark survives them)."""
        model = self._fitted_model()
        signals = check_signal_array(X, self.input_shape_)
        out = pgd_embed(model, signals, self.watermark_config_, pipe=self.embedding_pipe_)
        return self._flatten_like(out, X)

    def predict(self, X):
        """1 for signals carrying this watermarker's mark, else 0."""
        model = self._fitted_model()
        signals = check_signal_array(X, self.input_shape_)
        return predict(model, signals)

    def decision_function(self, X):
        from . import autodiff as ag
        from .detector import forward_logits

        model = self._fitted_model()
        signals = check_signal_array(X, self.input_shape_)
        with ag.no_grad():
            return forward_logits(model, signals).data[:, 0]

    def score(self, X, y):
        """Detection accuracy against {0, 1} labels."""
        return float(np.mean(self.predict(X) == np.asarray(y)))

    def held_out_accuracy(self, X) -> float:
        """Clean-vs-watermarked accuracy on held-out clean signals."""
        model = self._fitted_model()
        signals = check_signal_array(X, self.input_shape_)
        return evaluate_zero_bit_accuracy(model, signals, self.watermark_config_)


class MultibitWatermarker(_WatermarkerBase):
    """n-bit message watermarking: transform embeds codes, predict decodes."""

    def __init__(
        self,
        n_bits: int = 16,
        epsilon: float = 0.03,
        pgd_steps: int = 5,
        train_steps: int = 1500,
        batch_size: int = 32,
        lr: float = 0.1,
        momentum: float = 0.9,
        channel_widths: tuple = (16, 32, 64),
        strides: tuple = (1, 2, 2),
        kernel_size: int = 3,
        input_shape: tuple = None,
        pipeline="default",
        transform_samples: int = 1,
        seed: int = 0,
    ):
        self.n_bits = n_bits
        self.epsilon = epsilon
        self.pgd_steps = pgd_steps
        self.train_steps = train_steps
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.channel_widths = channel_widths
        self.strides = strides
        self.kernel_size = kernel_size
        self.input_shape = input_shape
        self.pipeline = pipeline
        self.transform_samples = transform_samples
        self.seed = seed

    def _default_pipeline(self) -> TransformPipeline:
        return TransformPipeline(
            specs=(TransformSpec.blur(1.0), TransformSpec.pixel_dropout(30.0)),
            mode="single_random",
            seed=self.seed,
        )

    def fit(self, X, y=None):
        signals = check_signal_array(X, self.input_shape)
        det = DetectorConfig(
            input_shape=tuple(signals.shape[1:]),
            channel_widths=tuple(self.channel_widths),
            strides=tuple(self.strides),
            kernel_size=self.kernel_size,
            head_dim=self.n_bits,
            seed=self.seed,
        )
        wm = WatermarkConfig(epsilon=self.epsilon, steps=self.pgd_steps, seed=self.seed)
        pipe = self._default_pipeline() if self.pipeline == "default" else self.pipeline
        cfg = TrainConfig(
            steps=self.train_steps,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            wm=wm,
            pipe=pipe,
            transform_samples=self.transform_samples,
            seed=self.seed,
        )
        model, report = train_multibit(build_detector(det), signals, cfg)
        self.model_ = model
        self.report_ = report
        self.input_shape_ = tuple(signals.shape[1:])
        self.watermark_config_ = wm
        return self

    def transform(self, X, codes=None):
        """Embed codes ((N, n_bits) in {0,1}; random when omitted)."""
        model = self._fitted_model()
        signals = check_signal_array(X, self.input_shape_)
        if codes is None:
            rng = np.random.default_rng(self.seed)
            codes = rng.integers(0, 2, size=(signals.shape[0], self.n_bits))
        out = embed_multibit(model, signals, np.asarray(codes), self.watermark_config_)
        return self._flatten_like(out, X)

    def predict(self, X):
        """Decode the bit code carried by each signal."""
        model = self._fitted_model()
        signals = check_signal_array(X, self.input_shape_)
        return decode_multibit(model, signals)

    def score(self, X, codes):
        """Mean fraction of correctly recovered bits."""
        return float(np.mean(self.predict(X) == np.asarray(codes)))


def make_demo_signals(count: int = 64, shape=(3, 32, 32), seed: int = 0) -> np.ndarray:
    """Small synthetic corpus for examples and quick-start docs."""
    from .data import synth_dataset

    spec = SynthDatasetSpec(count=max(count * 2, 4), shape=shape, generator="mixed", seed=seed)
    train_part, _ = synth_dataset(spec)
    return train_part[:count]
