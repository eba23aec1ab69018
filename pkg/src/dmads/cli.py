"""``dmads`` command line: train, infer, eval, overlay, synth, inspect.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
Errors go to stderr prefixed with ``dmads:``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_run_config
from .data import DataError, generate_synthetic, load_dataset, load_sample, read_png, write_png
from .metrics import binarize, compute_metrics
from .model import DmADsNet, ModelConfig
from .nn import count_parameters
from .overlay import render_overlay
from .tensor import NumericalError, TensorError
from .training import predict, train

__all__ = ["main", "run_cli", "REPORT_SCHEMA"]

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

REPORT_VERSION = "dmads.eval/1"

_METRIC_PROPS = {k: {"type": "number", "minimum": 0, "maximum": 1} for k in ("dice", "iou", "precision", "recall")}
_COUNT_PROPS = {k: {"type": "integer", "minimum": 0} for k in ("tp", "fp", "fn", "tn")}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "comparable_to_paper_tables", "samples", "mean"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": REPORT_VERSION},
        "comparable_to_paper_tables": {"const": False},
        "note": {"type": "string"},
        "samples": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", *_METRIC_PROPS, *_COUNT_PROPS],
                "additionalProperties": False,
                "properties": {"id": {"type": "string"}, **_METRIC_PROPS, **_COUNT_PROPS},
            },
        },
        "mean": {
            "type": "object",
            "required": list(_METRIC_PROPS),
            "additionalProperties": False,
            "properties": _METRIC_PROPS,
        },
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _mask_from_png(path) -> np.ndarray:
    arr = read_png(path)
    if arr.ndim == 3:
        arr = arr[..., :3].mean(axis=-1)
    return (arr >= 128).astype(np.uint8)


def _write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w") as f:
        json.dump(obj, f, indent=2)
    os.replace(tmp, path)


def _load_model(ckpt) -> DmADsNet:
    store, cfg = load_checkpoint(ckpt)
    net = DmADsNet(cfg, init=False)
    store.load_into(net)
    return net


# -- subcommands ---------------------------------------------------------------


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    cfg = run.model_config()
    train_set, val_set = load_dataset(run.data_dir, cfg.image_size, run.seed)
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net = DmADsNet(cfg)
    result = train(net, train_set, val_set, run.schedule(), out / "best.ckpt", out / "train_log.jsonl")
    s = result.state
    print(f"stopped after epoch {s.epoch} ({result.stop_reason}); best val dice {s.best_metric:.4f} at epoch {s.best_epoch}")
    print(f"checkpoint: {out / 'best.ckpt'}")
    return EXIT_OK


def cmd_infer(args) -> int:
    net = _load_model(args.ckpt)
    sample = load_sample(args.input, args.input, net.cfg.image_size, Path(args.input).stem)
    logits = predict(net, sample.image)
    mask = binarize(logits[0, 0], args.threshold)
    write_png(args.output, mask.astype(np.uint8) * 255)
    return EXIT_OK


def build_report(pred_dir, gt_dir) -> dict:
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    gts = {p.stem: p for p in sorted(gt_dir.glob("*.png"))}
    if not gts:
        raise DataError(f"{gt_dir}: no ground-truth PNG masks found")
    preds = {p.stem: p for p in sorted(pred_dir.glob("*.png"))}
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise DataError(f"{pred_dir}: no prediction for stem(s): {', '.join(missing)}")
    samples = []
    for stem in sorted(gts):
        p, g = _mask_from_png(preds[stem]), _mask_from_png(gts[stem])
        if p.shape != g.shape:
            raise DataError(f"{stem}: prediction {p.shape} and ground truth {g.shape} differ in size")
        samples.append({"id": stem, **compute_metrics(p, g).as_dict()})
    mean = {k: float(np.mean([s[k] for s in samples])) for k in ("dice", "iou", "precision", "recall")}
    return {
        "schema": REPORT_VERSION,
        "comparable_to_paper_tables": False,
        "note": "dataset splits differ from the published experiments; numbers are not comparable to them",
        "samples": samples,
        "mean": mean,
    }


def cmd_eval(args) -> int:
    report = build_report(args.pred_dir, args.gt_dir)
    _write_json(args.report, report)
    m = report["mean"]
    print(f"{len(report['samples'])} samples: dice {m['dice']:.4f} iou {m['iou']:.4f} precision {m['precision']:.4f} recall {m['recall']:.4f}")
    return EXIT_OK


def cmd_overlay(args) -> int:
    pred, gt = _mask_from_png(args.pred), _mask_from_png(args.gt)
    if pred.shape != gt.shape:
        raise DataError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    base = read_png(args.image) if args.image else None
    if base is not None and base.shape[:2] != pred.shape:
        raise DataError(f"image {base.shape[:2]} and masks {pred.shape} differ in size")
    write_png(args.out, render_overlay(pred, gt, base, args.alpha))
    return EXIT_OK


def cmd_synth(args) -> int:
    stems = generate_synthetic(args.out_dir, args.n, args.size, args.seed)
    print(f"wrote {len(stems)} pairs to {args.out_dir}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    if args.ckpt:
        store, cfg = load_checkpoint(args.ckpt)
        n_params = store.count()
    else:
        cfg = ModelConfig(image_size=args.image_size, width_multiplier=args.width_multiplier)
        n_params = count_parameters(DmADsNet(cfg, init=False))
    macs = DmADsNet(cfg, init=False).macs()[1]
    print(f"parameters: {n_params} ({n_params / 1e6:.2f}M)")
    print(f"MACs per {cfg.image_size}x{cfg.image_size} image: {macs} ({macs / 1e9:.2f} GMac)")
    print("published reference: 36.28M parameters, 33.06 GMac (channel widths differ; see README)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dmads", description="DmADs-Net segmentation toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train from a key=value config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict a binary mask for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score prediction masks against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("overlay", help="render a red/green error overlay")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--image")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser("synth", help="write a synthetic ellipse dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect", help="report parameter count and MAC estimate")
    p.add_argument("--ckpt")
    p.add_argument("--image-size", type=int, default=256)
    p.add_argument("--width-multiplier", type=float, default=1.0)
    p.set_defaults(func=cmd_inspect)
    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("a subcommand is required: train, infer, eval, overlay, synth, inspect")
        return args.func(args)
    except UsageError as exc:
        print(f"dmads: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"dmads: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"dmads: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, CheckpointError, TensorError, ValueError, OSError) as exc:
        print(f"dmads: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
