"""Command-line pipeline: prepare, train, eval, curve, ablate-lf.

Exit codes: 0 success; 1 training divergence (the message carries the
snapshot path); 2 usage, contract, or configuration errors; 3 file-format
and I/O errors. Every command is deterministic: identical inputs, flags,
and seeds produce byte-identical outputs.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import data
from . import metrics as mt
from . import models as md
from . import training as tr
from .config import config_json, load_run_config
from .exceptions import (
    ConfigError,
    ContractError,
    DimensionError,
    DivergenceError,
    FormatError,
)

_EVAL_COLUMNS = ("psnr_y", "ssim_y", "lf_mae", "perceptual_proxy")


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _manifest_samples(manifest_path, scale):
    """Load a manifest's image pairs and verify the LR/HR size ratio."""
    manifest = data.load_manifest(manifest_path, scale=scale)
    base = os.path.dirname(os.path.abspath(manifest_path))
    samples = data.load_samples(manifest, base)
    for s in samples:
        _, lh, lw = s.lr.shape
        _, hh, hw = s.hr.shape
        if (hh, hw) != (scale * lh, scale * lw):
            raise ContractError(
                f"sample {s.sample_id}: HR {hh}x{hw} is not {scale}x the LR {lh}x{lw}"
            )
    return samples


def _super_resolve_all(bundle, samples):
    """Ordered per-image stage outputs [(y_prime, y)], each [C,H,W]."""
    outs = []
    for s in samples:
        y_prime, y = tr.super_resolve_pair(bundle, s.lr[None])
        outs.append((y_prime[0], y[0]))
    return outs


def _maybe_crop(image, border):
    return mt.crop_border(image, border) if border else image


def _write_text(path, text):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------


def cmd_prepare(args):
    if args.synthetic:
        data.generate_synthetic_corpus(
            args.hr_dir, args.synthetic, args.synthetic_size, args.seed
        )
    if not os.path.isdir(args.hr_dir):
        raise ContractError(f"HR directory does not exist: {args.hr_dir}")
    manifest = data.prepare_dataset(
        args.hr_dir, args.out_dir, args.scale, patch_size_lr=args.patch_size_lr
    )
    if args.val_count:
        train_m, val_m = data.split_manifest(manifest, args.val_count)
        data.save_manifest(train_m, os.path.join(args.out_dir, "manifest.tsv"))
        data.save_manifest(val_m, os.path.join(args.out_dir, "manifest_val.tsv"))
        print(
            f"prepared {len(train_m.entries)} train + {len(val_m.entries)} "
            f"val pairs in {args.out_dir}"
        )
    else:
        print(f"prepared {len(manifest.entries)} pairs in {args.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# train / ablate-lf
# ---------------------------------------------------------------------------


def _load_train_val(cfg):
    """Training samples plus the validation set.

    ``manifest_val.tsv`` next to the training manifest wins; otherwise
    ``run.val_count`` images are split off the tail.
    """
    manifest_path = os.path.join(cfg.data_dir, "manifest.tsv")
    samples = _manifest_samples(manifest_path, cfg.model.scale)
    val_path = os.path.join(cfg.data_dir, "manifest_val.tsv")
    if os.path.exists(val_path):
        return samples, _manifest_samples(val_path, cfg.model.scale)
    if cfg.val_count:
        if cfg.val_count >= len(samples):
            raise ConfigError(
                f"run.val_count={cfg.val_count} needs fewer than "
                f"{len(samples)} manifest rows"
            )
        return samples[: -cfg.val_count], samples[-cfg.val_count :]
    return samples, []


def _run_training(cfg, mode, resume):
    samples, val_samples = _load_train_val(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    ckpt_dir = os.path.join(cfg.out_dir, f"ckpt_{mode}")
    os.makedirs(ckpt_dir, exist_ok=True)

    model = tr.ModelBundle.create(cfg.model)
    common = dict(
        weights=cfg.loss,
        cx=cfg.cx,
        val_set=tuple(val_samples),
        checkpoint_dir=ckpt_dir,
        resume_from=resume,
    )
    if mode == "pdadmm":
        report = tr.train_pdadmm(
            samples,
            model,
            cfg.admm,
            extractor=cfg.extractor,
            gaussian_ksize=cfg.gaussian_ksize,
            gaussian_sigma=cfg.gaussian_sigma,
            **common,
        )
    elif mode == "baseline":
        report = tr.train_regularizer_baseline(
            samples, model, cfg.loss.lambda_r, cfg.admm, **common
        )
    elif mode == "po-swap":
        report = tr.train_po_swap(samples, model, cfg.admm, **common)
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown training mode {mode!r}")

    header = [f"config: {config_json(cfg)}", f"mode: {mode}"]
    if mode == "pdadmm":
        header.append(f"extractor: {cfg.extractor}")
    report_path = os.path.join(cfg.out_dir, f"report_{mode}.csv")
    tr.write_report_csv(report, report_path, header)
    print(f"report: {report_path}")
    print(f"checkpoint: {os.path.join(ckpt_dir, 'final.ckpt')}")
    return 0


def cmd_train(args):
    cfg = load_run_config(args.config, args.overrides)
    return _run_training(cfg, args.mode, args.resume)


def cmd_ablate_lf(args):
    cfg = load_run_config(args.config, args.overrides)
    cfg = replace(cfg, extractor=args.extractor)
    return _run_training(cfg, "pdadmm", args.resume)


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _metric_row(y_prime, y, hr, border):
    """(psnr_y, ssim_y, lf_mae, perceptual_proxy) for one image.

    The border crop applies to the reference-based scores; the
    low-frequency gap always compares the two full-frame stage outputs.
    """
    sr = _maybe_crop(y, border)
    gt = _maybe_crop(hr, border)
    psnr_v, proxy_v = mt.score_sr_pair(sr, gt)
    ssim_v = mt.ssim_y(sr, gt)
    gap_v = mt.lf_mae(y, y_prime)
    return psnr_v, ssim_v, gap_v, proxy_v


def _save_eval_images(image_dir, samples, outs):
    os.makedirs(image_dir, exist_ok=True)
    for s, (y_prime, y) in zip(samples, outs):
        data.save_png(os.path.join(image_dir, f"{s.sample_id}_stage1.png"), y_prime)
        data.save_png(os.path.join(image_dir, f"{s.sample_id}_final.png"), y)
        diff = np.abs(mt.ll_band(y) - mt.ll_band(y_prime)).mean(axis=0)
        peak = float(diff.max())
        if peak > 0.0:
            diff = diff / peak
        gray = np.repeat(diff[None], 3, axis=0)
        data.save_png(os.path.join(image_dir, f"{s.sample_id}_lfdiff.png"), gray)


def cmd_eval(args):
    ckpt = md.load_checkpoint(args.checkpoint)
    bundle = tr.bundle_from_checkpoint(ckpt)
    scale = ckpt.model_config.scale
    samples = _manifest_samples(args.manifest, scale)
    outs = _super_resolve_all(bundle, samples)

    per_image = []
    columns = {name: [] for name in _EVAL_COLUMNS}
    for s, (y_prime, y) in zip(samples, outs):
        values = _metric_row(y_prime, y, s.hr, args.crop_border)
        per_image.append((s.sample_id, values))
        for name, value in zip(_EVAL_COLUMNS, values):
            columns[name].append(value)
    mean_values = tuple(mt.mean_float(columns[name]) for name in _EVAL_COLUMNS)

    flags = {"crop_border": args.crop_border, "save_images": bool(args.image_dir)}
    lines = [f"# config: {json.dumps(flags, sort_keys=True)}"]
    lines.append("sample_id," + ",".join(_EVAL_COLUMNS))
    for sid, values in per_image + [("mean", mean_values)]:
        lines.append(",".join([sid] + [repr(float(v)) for v in values]))
    _write_text(args.out, "\n".join(lines) + "\n")

    if args.image_dir:
        _save_eval_images(args.image_dir, samples, outs)
    print(f"eval: {args.out} ({len(per_image)} images)")
    return 0


# ---------------------------------------------------------------------------
# curve
# ---------------------------------------------------------------------------


def _parse_alphas(text):
    try:
        alphas = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"--alphas must be comma-separated numbers, got {text!r}") from exc
    if not alphas:
        raise ConfigError("--alphas must name at least one value")
    return alphas


def cmd_curve(args):
    ckpt_o = md.load_checkpoint(args.checkpoint_o)
    ckpt_p = md.load_checkpoint(args.checkpoint_p)
    if ckpt_o.model_config.scale != ckpt_p.model_config.scale:
        raise ContractError(
            f"checkpoints disagree on scale: {ckpt_o.model_config.scale} "
            f"vs {ckpt_p.model_config.scale}"
        )
    samples = _manifest_samples(args.manifest, ckpt_o.model_config.scale)
    y_o = [y for _, y in _super_resolve_all(tr.bundle_from_checkpoint(ckpt_o), samples)]
    y_p = [y for _, y in _super_resolve_all(tr.bundle_from_checkpoint(ckpt_p), samples)]
    gt = [s.hr for s in samples]
    if args.crop_border:
        y_o = [_maybe_crop(v, args.crop_border) for v in y_o]
        y_p = [_maybe_crop(v, args.crop_border) for v in y_p]
        gt = [_maybe_crop(v, args.crop_border) for v in gt]

    alphas = _parse_alphas(args.alphas)
    points = mt.build_tradeoff_curve(y_o, y_p, gt, alphas, label=args.label)
    flags = {"alphas": alphas, "crop_border": args.crop_border, "label": args.label}
    text = mt.curve_csv_text(
        points, header_lines=[f"config: {json.dumps(flags, sort_keys=True)}"]
    )
    _write_text(args.out, text)
    print(f"curve: {args.out} ({len(points)} points)")
    return 0


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pdsr",
        description="Two-stage super-resolution pipeline with a consensus-coupled trainer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="crop HR images, synthesize LR pairs, write a manifest")
    p.add_argument("hr_dir", help="directory of HR PNG images")
    p.add_argument("out_dir", help="output dataset directory")
    p.add_argument("--scale", type=int, default=4, help="downscaling factor (default 4)")
    p.add_argument(
        "--patch-size-lr", type=int, default=16, help="LR patch size recorded in the manifest"
    )
    p.add_argument(
        "--synthetic",
        type=int,
        default=0,
        metavar="N",
        help="first generate N deterministic synthetic HR images into HR_DIR",
    )
    p.add_argument(
        "--synthetic-size", type=int, default=64, help="side length of synthetic images"
    )
    p.add_argument("--seed", type=int, default=0, help="seed for synthetic generation")
    p.add_argument(
        "--val-count",
        type=int,
        default=0,
        help="also split this many trailing images into manifest_val.tsv",
    )
    p.set_defaults(func=cmd_prepare)

    t = sub.add_parser("train", help="run one trainer and write its report and checkpoints")
    t.add_argument("config", help="JSON run config path")
    t.add_argument(
        "--mode",
        choices=["pdadmm", "baseline", "po-swap"],
        default="pdadmm",
        help="consensus trainer, soft-regularizer baseline, or swapped-role variant",
    )
    t.add_argument(
        "--set",
        action="append",
        default=[],
        dest="overrides",
        metavar="KEY=VALUE",
        help="override one config entry, e.g. --set admm.rho=0.5",
    )
    t.add_argument("--resume", default=None, help="checkpoint to resume from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint's outputs against a manifest")
    e.add_argument("checkpoint")
    e.add_argument("manifest")
    e.add_argument("--out", default="eval.csv", help="metrics CSV path (default eval.csv)")
    e.add_argument(
        "--crop-border",
        type=int,
        default=0,
        help="pixels cropped per side before reference-based metrics",
    )
    e.add_argument(
        "--image-dir",
        default=None,
        help="also save per-image stage outputs and low-frequency gap maps here",
    )
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser(
        "curve", help="score convex combinations of two checkpoints' outputs"
    )
    c.add_argument("checkpoint_o", help="fidelity-focused model checkpoint")
    c.add_argument("checkpoint_p", help="perception-focused model checkpoint")
    c.add_argument("manifest")
    c.add_argument(
        "--alphas",
        default="0.0,0.25,0.5,0.75,1.0",
        help="comma-separated mixing weights, ascending (1.0 = pure fidelity model)",
    )
    c.add_argument("--out", default="curve.csv", help="curve CSV path (default curve.csv)")
    c.add_argument("--crop-border", type=int, default=0)
    c.add_argument("--label", default="mix", help="label column value for every row")
    c.set_defaults(func=cmd_curve)

    a = sub.add_parser(
        "ablate-lf", help="run the consensus trainer with a chosen coupling statistic"
    )
    a.add_argument("config", help="JSON run config path")
    a.add_argument(
        "--extractor",
        choices=["dwt", "gaussian"],
        default="dwt",
        help="couple the low-frequency subband (dwt) or a blurred image (gaussian)",
    )
    a.add_argument(
        "--set", action="append", default=[], dest="overrides", metavar="KEY=VALUE"
    )
    a.add_argument("--resume", default=None, help="checkpoint to resume from")
    a.set_defaults(func=cmd_ablate_lf)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        snapshot = getattr(exc, "snapshot_path", None)
        detail = f" (snapshot: {snapshot})" if snapshot else ""
        print(f"error: {exc}{detail}", file=sys.stderr)
        return 1
    except (ConfigError, ContractError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
