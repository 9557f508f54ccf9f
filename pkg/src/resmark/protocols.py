"""Evaluation protocols: attack curves, specificity transfer, hold-one-out
generalization, certified-accuracy curves, and multi-bit robustness sweeps.

Rates are exact count ratios and every result carries its numerator and
denominator, so the emitted CSVs are reconstructible.  All randomness flows
through explicit generators; identical seeds reproduce identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import transforms as tf
from .detector import DetectorModel, build_detector, predict
from .embedder import WatermarkConfig, decode_multibit, embed_multibit, pgd_embed
from .errors import InvalidArgumentError
from .metrics import PSNR_INFINITE, psnr, ssim
from .smoothing import certify

OOD_TRANSFORM_KINDS = (
    "blur",
    "brightness",
    "contrast",
    "crop",
    "gaussian_noise",
    "jpeg_like",
    "rotation",
)


@dataclass(frozen=True)
class AttackResult:
    """Outcome of attacking one detector with one transform at one epsilon."""

    transform: str
    epsilon: float
    n_variants: int
    success_rate_watermarked: float  # false negatives / watermarked variants
    success_rate_clean: float  # false positives / clean variants
    mean_ssim_watermark: float
    mean_ssim_transform: float
    mean_psnr_transform: float
    fn_count: int
    wm_total: int
    fp_count: int
    clean_total: int

    def row(self) -> dict:
        return {
            "transform": self.transform,
            "epsilon": self.epsilon,
            "n_variants": self.n_variants,
            "success_rate_watermarked": self.success_rate_watermarked,
            "success_rate_clean": self.success_rate_clean,
            "mean_ssim_watermark": self.mean_ssim_watermark,
            "mean_ssim_transform": self.mean_ssim_transform,
            "mean_psnr_transform": self.mean_psnr_transform,
            "fn_count": self.fn_count,
            "wm_total": self.wm_total,
            "fp_count": self.fp_count,
            "clean_total": self.clean_total,
        }


@dataclass(frozen=True)
class MinEpsilonResult:
    """Grid-search outcome; ``found`` is False when no epsilon qualifies."""

    found: bool
    epsilon: float
    best_accuracy: float
    result: AttackResult


def _spec_label(pipe_or_spec) -> str:
    if isinstance(pipe_or_spec, tf.TransformSpec):
        params = ",".join(f"{k}={v:g}" for k, v in pipe_or_spec.params)
        return f"{pipe_or_spec.kind}({params})" if params else pipe_or_spec.kind
    kinds = "+".join(s.kind for s in pipe_or_spec.specs)
    return f"{pipe_or_spec.mode}[{kinds}]"


def _apply(pipe_or_spec, batch, rng, original=None):
    if isinstance(pipe_or_spec, tf.TransformSpec):
        return tf.apply_spec(pipe_or_spec, batch, rng, original=original)
    return tf.apply_pipeline(pipe_or_spec, batch, rng=rng, original=original)


def _embed_all(model, signals, cfg, rng=None, chunk=256):
    out = np.empty_like(signals)
    for lo in range(0, signals.shape[0], chunk):
        out[lo : lo + chunk] = pgd_embed(model, signals[lo : lo + chunk], cfg, rng=rng)
    return out


def _finite_mean(values) -> float:
    vals = [v for v in values if v != PSNR_INFINITE]
    if not vals:
        return PSNR_INFINITE
    return float(np.mean(vals))


def transformation_attack_curve(
    model: DetectorModel,
    signals,
    pipe_or_spec,
    epsilons,
    n_variants: int,
    rng,
    signal_chunk: int = 8,
) -> list:
    """Attack a detector across watermark strengths with one transform source.

    For every epsilon each signal is embedded, then ``n_variants`` transformed
    copies of the watermarked and the clean signal are scored.  Detection
    rates use every variant; the transform-fidelity means (SSIM/PSNR against
    the untransformed input) are estimated from one variant per signal.
    """
    if n_variants < 1:
        raise InvalidArgumentError(f"n_variants must be >= 1, got {n_variants}")
    signals = np.asarray(signals, dtype=np.float32)
    label = _spec_label(pipe_or_spec)
    # Per-epsilon child streams derived once from the caller's generator; the
    # clean-variant stream is shared across epsilons, so the clean attack rate
    # is exactly independent of the watermark strength (it never touches it).
    base = int(rng.integers(0, 2**63 - 1))
    results = []
    for eps_index, eps in enumerate(epsilons):
        wm_rng = np.random.default_rng((base, eps_index))
        clean_rng = np.random.default_rng((base, 2**20))
        cfg = WatermarkConfig(epsilon=float(eps), steps=5, seed=0)
        watermarked = _embed_all(model, signals, cfg)
        fn = fp = 0
        ssim_wm = []
        ssim_tr = []
        psnr_tr = []
        for lo in range(0, signals.shape[0], signal_chunk):
            clean = signals[lo : lo + signal_chunk]
            wm = watermarked[lo : lo + signal_chunk]
            m = clean.shape[0]
            wm_rep = np.repeat(wm, n_variants, axis=0)
            cl_rep = np.repeat(clean, n_variants, axis=0)
            wm_t = _apply(pipe_or_spec, wm_rep, wm_rng, original=cl_rep)
            cl_t = _apply(pipe_or_spec, cl_rep, clean_rng, original=cl_rep)
            fn += int(np.sum(predict(model, wm_t) == 0))
            fp += int(np.sum(predict(model, cl_t) == 1))
            for i in range(m):
                ssim_wm.append(ssim(wm[i], clean[i]))
                ssim_tr.append(ssim(wm_t[i * n_variants], wm[i]))
                ssim_tr.append(ssim(cl_t[i * n_variants], clean[i]))
                psnr_tr.append(psnr(wm_t[i * n_variants], wm[i]))
                psnr_tr.append(psnr(cl_t[i * n_variants], clean[i]))
        total = signals.shape[0] * n_variants
        results.append(
            AttackResult(
                transform=label,
                epsilon=float(eps),
                n_variants=n_variants,
                success_rate_watermarked=fn / total,
                success_rate_clean=fp / total,
                mean_ssim_watermark=float(np.mean(ssim_wm)),
                mean_ssim_transform=float(np.mean(ssim_tr)),
                mean_psnr_transform=_finite_mean(psnr_tr),
                fn_count=fn,
                wm_total=total,
                fp_count=fp,
                clean_total=total,
            )
        )
    return results


def min_epsilon_full_detection(
    model: DetectorModel,
    signals,
    spec,
    n_variants: int,
    eps_grid,
    rng,
    target_acc: float = 0.99,
) -> MinEpsilonResult:
    """Smallest grid epsilon whose watermarked-variant detection accuracy
    exceeds ``target_acc``; a not-found result reports the best achieved."""
    eps_grid = [float(e) for e in eps_grid]
    if any(b < a for a, b in zip(eps_grid, eps_grid[1:])):
        raise InvalidArgumentError("eps_grid must be ascending")
    best = None
    best_acc = -1.0
    for eps in eps_grid:
        (result,) = transformation_attack_curve(
            model, signals, spec, [eps], n_variants, rng
        )
        acc = 1.0 - result.success_rate_watermarked
        if acc > best_acc:
            best, best_acc = result, acc
        if acc > target_acc:
            return MinEpsilonResult(True, eps, acc, result)
    return MinEpsilonResult(False, float("nan"), best_acc, best)


def specificity_transfer_eval(
    source_models,
    target_model: DetectorModel,
    signals,
    cfg: WatermarkConfig,
    epsilons,
    rng,
) -> list:
    """Transfer false-positive curve: watermarks built by each source model,
    scored by the target.  Returns rows of
    (epsilon, mean watermark SSIM, transfer false-positive rate, counts)."""
    source_models = list(source_models)
    if not source_models:
        raise InvalidArgumentError("specificity_transfer_eval needs at least one source model")
    signals = np.asarray(signals, dtype=np.float32)
    rows = []
    for eps in epsilons:
        cfg_eps = cfg.with_epsilon(float(eps))
        hits = 0
        total = 0
        ssim_vals = []
        for source in source_models:
            wm = _embed_all(source, signals, cfg_eps)
            hits += int(np.sum(predict(target_model, wm) == 1))
            total += wm.shape[0]
            ssim_vals.extend(ssim(wm[i], signals[i]) for i in range(wm.shape[0]))
        rows.append(
            {
                "epsilon": float(eps),
                "mean_ssim": float(np.mean(ssim_vals)),
                "false_positive_rate": hits / total,
                "fp_count": hits,
                "total": total,
            }
        )
    return rows


def ood_holdout_eval(
    dataset,
    all_specs,
    train_cfg,
    det_config,
    rng,
    eval_signals: int = 200,
    n_variants: int = 2,
    train_fn=None,
) -> tuple:
    """Hold-one-out generalization matrix over the seven evaluation transforms.

    Row i: a detector trained with every transform except ``all_specs[i]``
    sampled during training (evaluation-only transforms never enter the
    embedding gradient path; they only preprocess the detector-update batch).
    Column j: clean-vs-watermarked accuracy under transform j.  Returns
    (matrix, kinds) with the held-out transform on the diagonal.
    """
    from .trainer import train  # deferred to avoid a module cycle

    specs = list(all_specs)
    kinds = tuple(sorted(s.kind for s in specs))
    if kinds != tuple(sorted(OOD_TRANSFORM_KINDS)) or len(specs) != 7:
        raise InvalidArgumentError(
            f"ood_holdout_eval needs exactly the seven transforms "
            f"{OOD_TRANSFORM_KINDS}, got {kinds}"
        )
    specs = sorted(specs, key=lambda s: s.kind)
    train_signals, test_signals = dataset
    test_signals = np.asarray(test_signals, dtype=np.float32)[:eval_signals]
    if train_fn is None:
        train_fn = lambda model, cfg: train(model, train_signals, cfg)[0]

    matrix = np.zeros((7, 7), dtype=np.float64)
    for i, held_out in enumerate(specs):
        train_pipe = tf.TransformPipeline(
            specs=tuple(s for s in specs if s.kind != held_out.kind),
            mode="single_random",
            seed=train_cfg.seed,
        )
        cfg_i = replace(train_cfg, pipe=train_pipe)
        model = train_fn(build_detector(replace(det_config, seed=det_config.seed + i)), cfg_i)
        watermarked = _embed_all(model, test_signals, cfg_i.wm)
        for j, spec in enumerate(specs):
            correct = 0
            total = 0
            for _ in range(n_variants):
                wm_t = tf.apply_spec(spec, watermarked, rng, original=test_signals)
                cl_t = tf.apply_spec(spec, test_signals, rng, original=test_signals)
                correct += int(np.sum(predict(model, wm_t) == 1))
                correct += int(np.sum(predict(model, cl_t) == 0))
                total += 2 * test_signals.shape[0]
            matrix[i, j] = correct / total
    return matrix, tuple(s.kind for s in specs)


def certified_accuracy_curve(
    model, watermarked_signals, sigma: float, n: int, alpha: float, radii_grid, rng
) -> list:
    """Fraction of signals certified as watermarked with radius >= r, per r."""
    radii = [float(r) for r in radii_grid]
    if any(b < a for a, b in zip(radii, radii[1:])):
        raise InvalidArgumentError("radii_grid must be ascending")
    certified_radii = []
    for s in watermarked_signals:
        cert = certify(model, s, sigma, n, alpha, rng)
        if cert.predicted_label == 1 and not cert.abstained:
            certified_radii.append(cert.radius)
    certified_radii = np.asarray(certified_radii)
    total = len(list(watermarked_signals))
    return [
        {
            "radius": r,
            "certified_accuracy": float(np.sum(certified_radii >= r)) / total,
            "certified_count": int(np.sum(certified_radii >= r)),
            "total": total,
        }
        for r in radii
    ]


def multibit_robustness_curve(
    model: DetectorModel, signals, codes, spec_sweep, cfg: WatermarkConfig, rng
) -> list:
    """Mean recovered-bit fraction after each swept transform of embedded codes."""
    if not model.is_multibit:
        raise InvalidArgumentError("multibit_robustness_curve expects a multi-bit detector")
    signals = np.asarray(signals, dtype=np.float32)
    codes = np.asarray(codes)
    embedded = np.empty_like(signals)
    chunk = 256
    for lo in range(0, signals.shape[0], chunk):
        embedded[lo : lo + chunk] = embed_multibit(
            model, signals[lo : lo + chunk], codes[lo : lo + chunk], cfg
        )
    rows = []
    for spec in spec_sweep:
        transformed = tf.apply_spec(spec, embedded, rng, original=signals)
        decoded = decode_multibit(model, transformed)
        match = int(np.sum(decoded == codes))
        rows.append(
            {
                "transform": _spec_label(spec),
                "mean_bit_recovery": match / codes.size,
                "matched_bits": match,
                "total_bits": int(codes.size),
            }
        )
    return rows
