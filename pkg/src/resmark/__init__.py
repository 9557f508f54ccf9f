"""resmark: transformation-resilient signal watermarking.

Watermarks are imperceptible l-infinity bounded perturbations constructed by
projected gradient descent against a learned convolutional detector; the
detector is trained adversarially under sampled signal transformations so
detection survives post-processing.  Includes randomized-smoothing
certification, fidelity metrics, evaluation protocols, file formats, a CLI,
and sklearn-style estimators.
"""

from .autodiff import Tensor, no_grad
from .data import SynthDatasetSpec, synth_dataset
from .detector import (
    DetectorConfig,
    DetectorModel,
    build_detector,
    forward_logits,
    parameter_count,
    predict,
)
from .embedder import (
    WatermarkConfig,
    decode_multibit,
    detect_zero_bit,
    embed_multibit,
    pgd_embed,
    pgd_embed_ensemble,
    project_linf,
)
from .errors import FormatError, InvalidArgumentError, InvalidStateError
from .estimator import MultibitWatermarker, ZeroBitWatermarker, default_training_pipeline
from .io import (
    load_checkpoint,
    load_pipeline,
    load_tensor_file,
    save_checkpoint,
    save_pipeline,
    save_tensor_file,
    write_report_csv,
)
from .metrics import MetricReport, PSNR_INFINITE, detection_accuracy, psnr, ssim
from .smoothing import Certificate, certify, clopper_pearson_lower, inv_norm_cdf, mc_class_counts
from .trainer import (
    AdaptiveEpsilon,
    TrainConfig,
    TrainReport,
    train,
    train_ensemble,
    train_multibit,
    train_specificity_hardened,
    train_step,
)
from .transforms import TransformPipeline, TransformSpec, apply_pipeline

__version__ = "0.1.0"

__all__ = [
    "AdaptiveEpsilon",
    "Certificate",
    "DetectorConfig",
    "DetectorModel",
    "FormatError",
    "InvalidArgumentError",
    "InvalidStateError",
    "MetricReport",
    "MultibitWatermarker",
    "PSNR_INFINITE",
    "SynthDatasetSpec",
    "Tensor",
    "TrainConfig",
    "TrainReport",
    "TransformPipeline",
    "TransformSpec",
    "WatermarkConfig",
    "ZeroBitWatermarker",
    "apply_pipeline",
    "build_detector",
    "certify",
    "clopper_pearson_lower",
    "decode_multibit",
    "default_training_pipeline",
    "detect_zero_bit",
    "detection_accuracy",
    "embed_multibit",
    "forward_logits",
    "inv_norm_cdf",
    "load_checkpoint",
    "load_pipeline",
    "load_tensor_file",
    "mc_class_counts",
    "no_grad",
    "parameter_count",
    "pgd_embed",
    "pgd_embed_ensemble",
    "predict",
    "project_linf",
    "psnr",
    "save_checkpoint",
    "save_pipeline",
    "save_tensor_file",
    "ssim",
    "synth_dataset",
    "train",
    "train_ensemble",
    "train_multibit",
    "train_specificity_hardened",
    "train_step",
    "write_report_csv",
]
