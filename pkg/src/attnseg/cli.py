"""Command-line interface.

Subcommands::

    gen-data   render a synthetic shapes dataset to disk
    train      train a model and write a checkpoint plus metric log
    eval       mean IoU of a checkpoint (or a directory of predictions)
    infer      segment one image with a checkpoint
    flops      analytic compute cost of a config
    gradcheck  verify tape gradients against finite differences

Every subcommand reads one optional config file (``--config``) plus any
number of ``--set key=value`` overrides; defaults are the toy recipe.
Exit status: 0 on success, 1 on a runtime error (one ``error: ...`` line on
stderr), 2 on bad usage.  Set ``ATTNSEG_LOG=debug|info|warning`` for log
verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import flops as flops_mod
from .config import load_config, parse_config
from .data import PALETTE, generate_dataset, read_pgm, read_ppm, write_pgm, write_ppm
from .errors import CheckpointError, ConfigError, DataError, NumericsError, ShapeError
from .evaluate import ConfusionMatrix, format_report
from .model import SegmentationModel
from .tensor import grad_check
from .train import evaluate_model, load_model, train

__all__ = ["main"]

log = logging.getLogger("attnseg.cli")


def _load_cfg(args):
    overrides = args.set or []
    if args.config:
        return load_config(args.config, overrides)
    return parse_config("", overrides, source="defaults")


def _add_config_flags(parser):
    parser.add_argument("--config", help="config file (defaults to the built-in toy recipe)")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


# ---- subcommands -------------------------------------------------------------


def _cmd_gen_data(args):
    cfg = _load_cfg(args)
    data_cfg = cfg.data
    if data_cfg.image_size == 0:
        # Freeze the resolved size so the dataset stands on its own.
        data_cfg.image_size = data_cfg.resolved_image_size(cfg.encoder)
    counts = {"train": data_cfg.train_count, "eval": data_cfg.eval_count}
    splits = args.splits.split(",") if args.splits else ["train", "eval"]
    for split in splits:
        split = split.strip()
        if split not in counts:
            raise ConfigError(f"unknown split {split!r} (expected train or eval)")
        paths = generate_dataset(args.out, counts[split], data_cfg, data_cfg.seed, split)
        print(f"{split}: wrote {len(paths)} image/label pairs under {os.path.join(args.out, split)}")
    return 0


def _cmd_train(args):
    cfg = _load_cfg(args)
    result = train(cfg, args.data, args.out, metrics_path=args.metrics, resume=args.resume)
    print(f"trained {result.iterations} iterations, final loss {result.final_loss:.6f}")
    print(f"checkpoint: {result.checkpoint_path}")
    if result.metrics_path:
        print(f"metrics: {result.metrics_path}")
    return 0


def _eval_predictions(args, cfg):
    """mIoU of pre-rendered prediction maps against a dataset split."""
    from .data import list_split

    pairs = list_split(args.data, args.split)
    cm = ConfusionMatrix(cfg.data.classes)
    for _, label_path in pairs:
        name = os.path.basename(label_path)
        pred_path = os.path.join(args.preds, name)
        if not os.path.exists(pred_path):
            raise DataError(f"missing prediction for {name} in {args.preds}")
        cm.update(read_pgm(label_path), read_pgm(pred_path))
    return cm


def _cmd_eval(args):
    if bool(args.ckpt) == bool(args.preds):
        raise ConfigError("eval needs exactly one of --ckpt or --preds")
    if args.preds:
        cfg = _load_cfg(args)
        cm = _eval_predictions(args, cfg)
        per_class, mean = cm.iou(), cm.mean_iou()
    else:
        model, cfg, _ = load_model(args.ckpt, args.set or [])
        from .data import load_split

        images, labels = load_split(args.data, args.split)
        per_class, mean = evaluate_model(model, images, labels, batch_size=args.batch_size)
    sys.stdout.write(format_report(per_class, mean))
    return 0


def _cmd_infer(args):
    model, cfg, _ = load_model(args.ckpt, args.set or [])
    image = read_ppm(args.image)
    size = cfg.data.resolved_image_size(cfg.encoder)
    if image.shape[:2] != (size, size):
        raise DataError(f"{args.image}: image is {image.shape[1]}x{image.shape[0]}, model wants {size}x{size}")
    labels = model.infer(image)
    write_pgm(args.out, labels.astype(np.uint8))
    print(f"wrote {args.out}")
    if args.color:
        write_ppm(args.color, PALETTE[labels])
        print(f"wrote {args.color}")
    return 0


def _format_rows(rows):
    width = max(len(name) for name, _ in rows)
    lines = [f"{'section':<{width}}  {'MACs':>16}  {'GFLOPs':>10}"]
    for name, macs in rows:
        lines.append(f"{name:<{width}}  {macs:>16d}  {macs / flops_mod.MACS_PER_GFLOP:>10.3f}")
    return "\n".join(lines)


def _grouped_layer_rows(layers):
    """Collapse runs of equal-cost encoder layers into one row each."""
    rows = []
    start = 0
    for i in range(1, len(layers) + 1):
        if i == len(layers) or layers[i].total != layers[start].total:
            label = f"encoder.layer.{start + 1}" if i - start == 1 else f"encoder.layers.{start + 1}-{i}"
            rows.append((label, sum(layer.total for layer in layers[start:i])))
            start = i
    return rows


def _cmd_flops(args):
    cfg = _load_cfg(args)
    crop = args.crop
    breakdown = flops_mod.estimate(cfg, crop)
    if args.kv:
        pairs = [
            ("patch_embed_macs", breakdown.patch_embed),
            ("encoder_macs", sum(l.total for l in breakdown.encoder_layers)),
            ("backbone_macs", breakdown.backbone_total),
            ("qu_macs", sum(b.total for b in breakdown.qu_blocks)),
            ("decoder_stage_macs", sum(s.total for s in breakdown.decoder_stages)),
            ("cls_head_macs", breakdown.cls_heads),
            ("decoder_macs", breakdown.decoder_total),
            ("total_macs", breakdown.total),
        ]
        for key, value in pairs:
            print(f"{key} = {value}")
        print(f"total_gflops = {breakdown.gflops()!r}")
        print(f"backbone_gflops = {breakdown.backbone_total / flops_mod.MACS_PER_GFLOP!r}")
        return 0
    rows = [("patch_embed", breakdown.patch_embed)]
    rows += _grouped_layer_rows(breakdown.encoder_layers)
    rows.append(("backbone total", breakdown.backbone_total))
    for i, block in enumerate(breakdown.qu_blocks, start=1):
        rows.append((f"query_upsample.{i}", block.total))
    for i, stage in enumerate(breakdown.decoder_stages, start=1):
        rows.append((f"decoder.stage.{i}", stage.total))
    rows.append(("class heads", breakdown.cls_heads))
    rows.append(("decoder total", breakdown.decoder_total))
    rows.append(("total", breakdown.total))
    print(_format_rows(rows))
    return 0


def _cmd_gradcheck(args):
    cfg = _load_cfg(args)
    cfg.train.precision = "f64"  # finite differences need the headroom
    model = SegmentationModel(cfg)
    size = cfg.data.resolved_image_size(cfg.encoder)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.train.seed, 2)))
    images = rng.uniform(-1.0, 1.0, size=(args.batch, size, size, 3))
    labels = rng.integers(0, cfg.data.classes, size=(args.batch, size, size))

    def loss_fn():
        loss, _ = model.loss_on_batch(images, labels)
        return loss

    worst = grad_check(
        loss_fn,
        model.parameters(),
        h=args.h,
        samples_per_param=args.samples,
        rng=np.random.default_rng(np.random.SeedSequence((cfg.train.seed, 3))),
    )
    print(f"max relative error = {worst:.3e} over {len(model.parameters())} parameters")
    if worst >= args.tol:
        print(f"error: gradient check failed: {worst:.3e} >= {args.tol:g}", file=sys.stderr)
        return 1
    return 0


# ---- entry point -------------------------------------------------------------


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="attnseg",
        description="Semantic segmentation whose attention maps double as masks, on a from-scratch autodiff core.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic shapes dataset")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--splits", help="comma-separated subset of train,eval (default both)")
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="dataset directory (train/ inside)")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--metrics", help="metric log path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or prediction directory")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default="eval", help="dataset split (default: eval)")
    p.add_argument("--ckpt", help="checkpoint to evaluate")
    p.add_argument("--preds", help="directory of predicted label maps (lbl_*.pgm)")
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("infer", help="segment one PPM image")
    p.add_argument("--ckpt", required=True, help="checkpoint to load")
    p.add_argument("--image", required=True, help="input image (binary PPM)")
    p.add_argument("--out", required=True, help="output label map (binary PGM)")
    p.add_argument("--color", help="optional color visualization (binary PPM)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help=argparse.SUPPRESS)
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("flops", help="analytic compute cost")
    _add_config_flags(p)
    p.add_argument("--crop", type=int, help="override the input resolution")
    p.add_argument("--kv", action="store_true", help="machine-readable key = value lines")
    p.set_defaults(fn=_cmd_flops)

    p = sub.add_parser("gradcheck", help="compare gradients against finite differences")
    _add_config_flags(p)
    p.add_argument("--samples", type=int, default=4, help="entries probed per parameter (default 4)")
    p.add_argument("--tol", type=float, default=1e-4, help="max relative error allowed")
    p.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    p.add_argument("--batch", type=int, default=1, help="synthetic batch size")
    p.set_defaults(fn=_cmd_gradcheck)
    return parser


def main(argv=None):
    level = os.environ.get("ATTNSEG_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataError, ShapeError, NumericsError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
