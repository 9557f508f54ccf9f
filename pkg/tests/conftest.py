import os

import numpy as np
import pytest

from resmark import autodiff as ag
from resmark.autodiff import Tensor
from resmark.data import SynthDatasetSpec, synth_dataset
from resmark.detector import DetectorConfig, build_detector
from resmark.embedder import WatermarkConfig
from resmark.trainer import TrainConfig, train


def gradcheck(make_loss, tensors, h=1e-4, rtol=1e-3, atol=1e-6):
    """Central-difference check of reverse-mode gradients, in float64.

    ``make_loss`` rebuilds the scalar loss from the current tensor data.
    Relative error is measured against max(|numeric|, |analytic|); entries
    where both are below ``atol`` pass outright.
    """
    for t in tensors:
        assert t.data.dtype == np.float64, "gradcheck expects float64 tensors"
        t.grad = None
    loss = make_loss()
    ag.backward(loss)
    analytic = [
        np.array(t.grad) if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]
    worst = 0.0
    for t, g in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(make_loss().data)
            flat[i] = orig - h
            down = float(make_loss().data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            if abs(numeric) < atol and abs(gflat[i]) < atol:
                continue
            rel = abs(numeric - gflat[i]) / max(abs(numeric), abs(gflat[i]))
            worst = max(worst, rel)
            assert rel <= rtol, (
                f"gradient mismatch at element {i}: numeric {numeric}, "
                f"analytic {gflat[i]}, rel {rel}"
            )
    return worst


def rand_tensor(rng, shape, lo=-1.0, hi=1.0, requires_grad=True):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=requires_grad, dtype=np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    spec = SynthDatasetSpec(count=400, shape=(3, 16, 16), generator="mixed", seed=7)
    return synth_dataset(spec)


@pytest.fixture(scope="session")
def tiny_model():
    """An untrained small detector for shape-level tests."""
    return build_detector(
        DetectorConfig(input_shape=(3, 16, 16), channel_widths=(4, 8), strides=(1, 2), seed=5)
    )


@pytest.fixture(scope="session")
def trained_tiny(small_dataset):
    """A quickly trained detector on 16x16 signals (no transforms), for tests
    that need watermarks to actually be detectable."""
    train_x, test_x = small_dataset
    cfg = TrainConfig(
        steps=150,
        batch_size=32,
        lr=0.1,
        momentum=0.9,
        wm=WatermarkConfig(epsilon=20 / 255, steps=5, seed=3),
        pipe=None,
        seed=3,
    )
    model = build_detector(
        DetectorConfig(input_shape=(3, 16, 16), channel_widths=(8, 16), strides=(1, 2), seed=9)
    )
    model, report = train(model, train_x, cfg, test_signals=test_x[:100])
    return model, report, cfg, small_dataset
