"""Command-line surface for reproducible watermarking runs.

Every subcommand resolves its full configuration, writes its outputs under
``--out``, and drops a ``<command>.manifest.json`` next to them recording the
resolved configuration, so a run can be reproduced from its artifacts alone.
Exit codes: 0 success, 1 usage error, 2 data or file-format error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io as rio
from . import transforms as tf
from .data import SynthDatasetSpec, synth_dataset
from .detector import DetectorConfig, build_detector
from .embedder import (
    WatermarkConfig,
    decode_multibit,
    embed_multibit,
    pgd_embed,
    pgd_embed_ensemble,
)
from .errors import FormatError, InvalidArgumentError
from .estimator import default_training_pipeline
from .metrics import PSNR_INFINITE, psnr, ssim
from .protocols import (
    OOD_TRANSFORM_KINDS,
    certified_accuracy_curve,
    min_epsilon_full_detection,
    multibit_robustness_curve,
    specificity_transfer_eval,
    transformation_attack_curve,
)
from .smoothing import certify
from .trainer import (
    AdaptiveEpsilon,
    TrainConfig,
    train,
    train_ensemble,
    train_multibit,
    train_specificity_hardened,
)

USAGE_ERROR = 1
DATA_ERROR = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _parse_shape(text: str) -> tuple:
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 3:
        raise _UsageError(f"expected C,H,W shape, got {text!r}")
    return tuple(parts)


def _parse_ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",")) if text else ()


def _parse_floats(text: str) -> list:
    return [float(eval(v, {"__builtins__": {}})) for v in text.split(",")]


def _parse_spec(text: str) -> tf.TransformSpec:
    fields = text.replace(":", " ").split()
    params = {}
    for item in fields[1:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise _UsageError(f"expected key=value in spec, got {item!r}")
        params[key] = float(value)
    return tf.TransformSpec(fields[0], tuple(params.items()))


def _load_pipeline_arg(value, seed: int):
    if value is None or value == "none":
        return None
    if value == "default":
        return default_training_pipeline(seed)
    return rio.load_pipeline(value)


def _load_signals(path) -> np.ndarray:
    tensors = rio.load_tensor_file(path)
    if "signals" not in tensors:
        raise FormatError(f"{path}: no 'signals' tensor found")
    arr = tensors["signals"]
    if arr.ndim != 4:
        raise FormatError(f"{path}: 'signals' must be 4-d, got shape {arr.shape}")
    return arr


def _manifest(out_dir: str, command: str, config: dict, outputs: list):
    path = os.path.join(out_dir, f"{command}.manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"command": command, "config": config, "outputs": outputs},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")


def _train_config_from_args(args, pipe) -> TrainConfig:
    adaptive = None
    if getattr(args, "adaptive", None):
        delta, window = args.adaptive.split(",")
        adaptive = AdaptiveEpsilon(delta=float(delta), window=int(window))
    return TrainConfig(
        steps=args.steps,
        batch_size=args.batch,
        lr=args.lr,
        lr_decay_factor=args.lr_decay_factor,
        lr_decay_every=args.lr_decay_every,
        momentum=args.momentum,
        wm=WatermarkConfig(epsilon=args.eps, steps=args.pgd_steps, seed=args.seed),
        pipe=pipe,
        transform_samples=args.n_samples,
        adaptive_epsilon=adaptive,
        seed=args.seed,
    )


def _detector_config_from_args(args, input_shape, head_dim=1) -> DetectorConfig:
    return DetectorConfig(
        input_shape=input_shape,
        channel_widths=_parse_ints(args.widths),
        strides=_parse_ints(args.strides),
        kernel_size=args.kernel,
        head_dim=head_dim,
        seed=args.seed,
    )


def _add_common_train_args(p):
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--lr-decay-factor", type=float, default=0.1)
    p.add_argument("--lr-decay-every", type=int, default=0)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--eps", type=float, default=20.0 / 255.0)
    p.add_argument("--pgd-steps", type=int, default=5)
    p.add_argument("--n-samples", type=int, default=1)
    p.add_argument("--adaptive", help="delta,window for the adaptive epsilon schedule")
    p.add_argument("--widths", default="16,32,64")
    p.add_argument("--strides", default="1,2,2")
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--pipeline", default="default", help="pipeline file, 'default', or 'none'")
    p.add_argument("--data", required=True, help="RTNS file of training signals")
    p.add_argument("--test", help="optional RTNS file of held-out signals")
    p.add_argument("--checkpoint-every", type=int, default=0,
                   help="also save model_step<k>.rswt every k steps (0 disables)")


def build_parser() -> _Parser:
    parser = _Parser(prog="resmark", description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--format", choices=["csv"], default="csv")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--shape", default="3,32,32")
    p.add_argument("--generator", choices=["gaussian_field", "shapes", "mixed"], default="mixed")
    p.add_argument("--train-fraction", type=float, default=0.5)

    p = sub.add_parser("train", help="train a zero-bit detector")
    _add_common_train_args(p)

    p = sub.add_parser("train-multibit", help="train a multi-bit decoder")
    _add_common_train_args(p)
    p.add_argument("--bits", type=int, default=16)

    p = sub.add_parser("train-ensemble", help="train detectors differing only by init")
    _add_common_train_args(p)
    p.add_argument("--seeds", required=True, help="comma-separated detector seeds")

    p = sub.add_parser("train-hardened", help="train with transfer-resistant watermarks")
    _add_common_train_args(p)
    p.add_argument("--ensemble", required=True, help="comma-separated checkpoint paths")

    p = sub.add_parser("embed", help="embed watermarks into signals")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--eps", type=float, default=20.0 / 255.0)
    p.add_argument("--pgd-steps", type=int, default=5)
    p.add_argument("--pipeline", default="none")
    p.add_argument("--n-samples", type=int, default=0)

    p = sub.add_parser("detect", help="print one 0/1 decision per input signal")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--threshold", type=float, default=0.0)

    p = sub.add_parser("decode", help="print one bit string per input signal")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)

    p = sub.add_parser("attack-curve", help="transformation attack sweep")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--spec", help="transform spec, e.g. 'gaussian_noise sigma=0.25'")
    p.add_argument("--pipeline", help="pipeline file to attack with")
    p.add_argument("--epsilons", default="1/255,12/255,23/255,33/255")
    p.add_argument("--variants", type=int, default=100)

    p = sub.add_parser("min-eps", help="smallest epsilon reaching target detection")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--grid", default="1/255,4/255,8/255,12/255,16/255,20/255,24/255,28/255,33/255")
    p.add_argument("--variants", type=int, default=100)
    p.add_argument("--target-acc", type=float, default=0.99)

    p = sub.add_parser("specificity", help="cross-model transfer false positives")
    p.add_argument("--sources", required=True, help="comma-separated checkpoints")
    p.add_argument("--target", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--epsilons", default="5/255,10/255,20/255,40/255")
    p.add_argument("--pgd-steps", type=int, default=5)

    p = sub.add_parser("ood-matrix", help="7x7 hold-one-out transform matrix")
    _add_common_train_args(p)
    p.add_argument("--eval-signals", type=int, default=200)
    p.add_argument("--variants", type=int, default=2)

    p = sub.add_parser("certify", help="randomized-smoothing certificates per input")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--sigma", type=float, default=0.25)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.99)

    p = sub.add_parser("certified-curve", help="certified accuracy vs radius")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--sigma", type=float, default=0.25)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.99)
    p.add_argument("--radii", default="0,0.1,0.2,0.3,0.5,0.75,1.0,1.5")
    p.add_argument("--eps", type=float, default=20.0 / 255.0)
    p.add_argument("--pgd-steps", type=int, default=5)

    p = sub.add_parser("multibit-curve", help="bit recovery under a transform sweep")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--sweep", required=True, help="semicolon-separated transform specs")
    p.add_argument("--eps", type=float, default=0.03)
    p.add_argument("--pgd-steps", type=int, default=5)

    p = sub.add_parser("metrics", help="SSIM/PSNR between two signal files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)

    return parser


def _cmd_gen_data(args) -> list:
    spec = SynthDatasetSpec(
        count=args.count,
        shape=_parse_shape(args.shape),
        generator=args.generator,
        seed=args.seed,
        train_fraction=args.train_fraction,
    )
    train_part, test_part = synth_dataset(spec)
    train_path = os.path.join(args.out, "train.rtns")
    test_path = os.path.join(args.out, "test.rtns")
    rio.save_tensor_file(train_path, [("signals", train_part)])
    rio.save_tensor_file(test_path, [("signals", test_part)])
    return [train_path, test_path]


def _periodic_checkpointer(args, model, extra_outputs):
    every = getattr(args, "checkpoint_every", 0)
    if not every:
        return None

    def hook(t, loss, acc):
        step = t + 1
        if step % every == 0:
            path = os.path.join(args.out, f"model_step{step}.rswt")
            rio.save_checkpoint(model, path, meta={"step": step, "seed": args.seed})
            extra_outputs.append(path)

    return hook


def _cmd_train(args) -> list:
    signals = _load_signals(args.data)
    test = _load_signals(args.test) if args.test else None
    pipe = _load_pipeline_arg(args.pipeline, args.seed)
    cfg = _train_config_from_args(args, pipe)
    det = _detector_config_from_args(args, tuple(signals.shape[1:]))
    model = build_detector(det)
    extra: list = []
    model, report = train(model, signals, cfg, test_signals=test,
                          progress=_periodic_checkpointer(args, model, extra))
    model_path = os.path.join(args.out, "model.rswt")
    report_path = os.path.join(args.out, "report.csv")
    meta = {"epsilon": cfg.wm.epsilon, "seed": args.seed, "steps": cfg.steps}
    if report.final_test_accuracy is not None:
        meta["final_test_accuracy"] = report.final_test_accuracy
    rio.save_checkpoint(model, model_path, meta=meta)
    rio.write_report_csv(report.rows(), report_path)
    return [model_path, report_path] + extra


def _cmd_train_multibit(args) -> list:
    signals = _load_signals(args.data)
    test = _load_signals(args.test) if args.test else None
    pipe = _load_pipeline_arg(args.pipeline, args.seed)
    if args.pipeline == "default":
        pipe = tf.TransformPipeline(
            specs=(tf.TransformSpec.blur(1.0), tf.TransformSpec.pixel_dropout(30.0)),
            mode="single_random",
            seed=args.seed,
        )
    cfg = _train_config_from_args(args, pipe)
    det = _detector_config_from_args(args, tuple(signals.shape[1:]), head_dim=args.bits)
    model, report = train_multibit(build_detector(det), signals, cfg, test_signals=test)
    model_path = os.path.join(args.out, "model.rswt")
    report_path = os.path.join(args.out, "report.csv")
    meta = {"epsilon": cfg.wm.epsilon, "seed": args.seed, "bits": args.bits}
    if report.final_test_accuracy is not None:
        meta["final_bit_recovery"] = report.final_test_accuracy
    rio.save_checkpoint(model, model_path, meta=meta)
    rio.write_report_csv(report.rows(), report_path)
    return [model_path, report_path]


def _cmd_train_ensemble(args) -> list:
    signals = _load_signals(args.data)
    pipe = _load_pipeline_arg(args.pipeline, args.seed)
    cfg = _train_config_from_args(args, pipe)
    det = _detector_config_from_args(args, tuple(signals.shape[1:]))
    seeds = [int(s) for s in args.seeds.split(",")]
    models = train_ensemble(len(seeds), det, cfg, signals, seeds)
    outputs = []
    for seed, model in zip(seeds, models):
        path = os.path.join(args.out, f"model_{seed}.rswt")
        rio.save_checkpoint(model, path, meta={"seed": seed, "epsilon": cfg.wm.epsilon})
        outputs.append(path)
    return outputs


def _cmd_train_hardened(args) -> list:
    signals = _load_signals(args.data)
    test = _load_signals(args.test) if args.test else None
    pipe = _load_pipeline_arg(args.pipeline, args.seed)
    cfg = _train_config_from_args(args, pipe)
    det = _detector_config_from_args(args, tuple(signals.shape[1:]))
    ensemble = [rio.load_checkpoint(p)[0] for p in args.ensemble.split(",")]
    model = train_specificity_hardened(
        build_detector(det), ensemble, signals, cfg, test_signals=test
    )
    model_path = os.path.join(args.out, "model.rswt")
    rio.save_checkpoint(
        model, model_path, meta={"epsilon": cfg.wm.epsilon, "hardened_against": len(ensemble)}
    )
    return [model_path]


def _cmd_embed(args) -> list:
    model, _ = rio.load_checkpoint(args.model)
    signals = _load_signals(args.input)
    pipe = _load_pipeline_arg(args.pipeline, args.seed)
    cfg = WatermarkConfig(
        epsilon=args.eps,
        steps=args.pgd_steps,
        transform_samples=args.n_samples,
        seed=args.seed,
    )
    out = pgd_embed(model, signals, cfg, pipe=pipe)
    out_path = os.path.join(args.out, "watermarked.rtns")
    rio.save_tensor_file(out_path, [("signals", out)])
    return [out_path]


def _cmd_detect(args) -> list:
    model, _ = rio.load_checkpoint(args.model)
    signals = _load_signals(args.input)
    from .detector import predict

    for label in predict(model, signals, threshold=args.threshold):
        print(int(label))
    return []


def _cmd_decode(args) -> list:
    model, _ = rio.load_checkpoint(args.model)
    signals = _load_signals(args.input)
    for bits in decode_multibit(model, signals):
        print("".join(str(int(b)) for b in bits))
    return []


def _cmd_attack_curve(args) -> list:
    model, _ = rio.load_checkpoint(args.model)
    signals = _load_signals(args.input)
    if bool(args.spec) == bool(args.pipeline):
        raise _UsageError("attack-curve needs exactly one of --spec / --pipeline")
    source = _parse_spec(args.spec) if args.spec else rio.load_pipeline(args.pipeline)
    rng = np.random.default_rng(args.seed)
    results = transformation_attack_curve(
        model, signals, source, _parse_floats(args.epsilons), args.variants, rng
    )
    path = os.path.join(args.out, "attack_curve.csv")
    rio.write_report_csv([r.row() for r in results], path)
    return [path]


def _cmd_min_eps(args) -> list:
    model, _ = rio.load_checkpoint(args.model)
    signals = _load_signals(args.input)
    rng = np.random.default_rng(args.seed)
    res = min_epsilon_full_detection(
        model,
        signals,
        _parse_spec(args.spec),
        args.variants,
        _parse_floats(args.grid),
        rng,
        target_acc=args.target_acc,
    )
    path = os.path.join(args.out, "min_eps.csv")
    row = {"found": res.found, "epsilon": res.epsilon, "best_accuracy": res.best_accuracy}
    row.update(res.result.row())
    rio.write_report_csv([row], path)
    return [path]


def _cmd_specificity(args) -> list:
    sources = [rio.load_checkpoint(p)[0] for p in args.sources.split(",")]
    target, _ = rio.load_checkpoint(args.target)
    signals = _load_signals(args.input)
    rng = np.random.default_rng(args.seed)
    rows = specificity_transfer_eval(
        sources,
        target,
        signals,
        WatermarkConfig(steps=args.pgd_steps, seed=args.seed),
        _parse_floats(args.epsilons),
        rng,
    )
    path = os.path.join(args.out, "specificity.csv")
    rio.write_report_csv(rows, path)
    return [path]


def _cmd_ood_matrix(args) -> list:
    from .protocols import ood_holdout_eval

    signals = _load_signals(args.data)
    test = _load_signals(args.test) if args.test else signals
    pipe = None  # per-row pipelines are derived from the held-out set
    cfg = _train_config_from_args(args, pipe)
    det = _detector_config_from_args(args, tuple(signals.shape[1:]))
    specs = default_ood_specs()
    rng = np.random.default_rng(args.seed)
    matrix, kinds = ood_holdout_eval(
        (signals, test), specs, cfg, det, rng,
        eval_signals=args.eval_signals, n_variants=args.variants,
    )
    path = os.path.join(args.out, "ood_matrix.csv")
    rows = []
    for i, row_kind in enumerate(kinds):
        row = {"held_out": row_kind}
        row.update({kinds[j]: float(matrix[i, j]) for j in range(len(kinds))})
        rows.append(row)
    rio.write_report_csv(rows, path)
    return [path]


def default_ood_specs() -> tuple:
    """The seven hold-one-out evaluation transforms at their standard settings."""
    return (
        tf.TransformSpec.blur(3.0),
        tf.TransformSpec.brightness(0.2),
        tf.TransformSpec.contrast(0.7),
        tf.TransformSpec.crop(8, 8),
        tf.TransformSpec.gaussian_noise(0.1),
        tf.TransformSpec.jpeg_like(50),
        tf.TransformSpec.rotation(np.pi / 2),
    )


def _cmd_certify(args) -> list:
    model, _ = rio.load_checkpoint(args.model)
    signals = _load_signals(args.input)
    rng = np.random.default_rng(args.seed)
    rows = []
    for s in signals:
        cert = certify(model, s, args.sigma, args.samples, args.alpha, rng)
        rows.append(
            {
                "label": cert.predicted_label,
                "p_lower": cert.p_lower,
                "radius": cert.radius,
                "abstained": cert.abstained,
                "samples": cert.samples_used,
                "sigma": cert.sigma,
                "alpha": cert.alpha,
            }
        )
    path = os.path.join(args.out, "certificates.csv")
    rio.write_report_csv(rows, path)
    return [path]


def _cmd_certified_curve(args) -> list:
    model, _ = rio.load_checkpoint(args.model)
    signals = _load_signals(args.input)
    cfg = WatermarkConfig(epsilon=args.eps, steps=args.pgd_steps, seed=args.seed)
    watermarked = pgd_embed(model, signals, cfg)
    rng = np.random.default_rng(args.seed)
    rows = certified_accuracy_curve(
        model, watermarked, args.sigma, args.samples, args.alpha,
        _parse_floats(args.radii), rng,
    )
    path = os.path.join(args.out, "certified_curve.csv")
    rio.write_report_csv(rows, path)
    return [path]


def _cmd_multibit_curve(args) -> list:
    model, _ = rio.load_checkpoint(args.model)
    signals = _load_signals(args.input)
    sweep = [_parse_spec(s) for s in args.sweep.split(";") if s.strip()]
    rng = np.random.default_rng(args.seed)
    codes = rng.integers(0, 2, size=(signals.shape[0], model.config.head_dim))
    cfg = WatermarkConfig(epsilon=args.eps, steps=args.pgd_steps, seed=args.seed)
    rows = multibit_robustness_curve(model, signals, codes, sweep, cfg, rng)
    path = os.path.join(args.out, "multibit_curve.csv")
    rio.write_report_csv(rows, path)
    return [path]


def _cmd_metrics(args) -> list:
    a = _load_signals(args.a)
    b = _load_signals(args.b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"signal files disagree: {a.shape} vs {b.shape}")
    rows = []
    for i in range(a.shape[0]):
        p = psnr(a[i], b[i])
        rows.append(
            {
                "index": i,
                "ssim": ssim(a[i], b[i]),
                "psnr": "inf" if p == PSNR_INFINITE else p,
            }
        )
    path = os.path.join(args.out, "metrics.csv")
    rio.write_report_csv(rows, path)
    return [path]


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "train-multibit": _cmd_train_multibit,
    "train-ensemble": _cmd_train_ensemble,
    "train-hardened": _cmd_train_hardened,
    "embed": _cmd_embed,
    "detect": _cmd_detect,
    "decode": _cmd_decode,
    "attack-curve": _cmd_attack_curve,
    "min-eps": _cmd_min_eps,
    "specificity": _cmd_specificity,
    "ood-matrix": _cmd_ood_matrix,
    "certify": _cmd_certify,
    "certified-curve": _cmd_certified_curve,
    "multibit-curve": _cmd_multibit_curve,
    "metrics": _cmd_metrics,
}


def cli(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return USAGE_ERROR
        os.makedirs(args.out, exist_ok=True)
        outputs = _COMMANDS[args.command](args)
        config = {k: v for k, v in sorted(vars(args).items()) if k != "command"}
        _manifest(args.out, args.command, config, outputs)
        return 0
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    except (FormatError, InvalidArgumentError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


def main():
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
