"""Command-line entry point: a thin client over the workflow layer.

Exit codes: 0 success, 1 runtime failure (I/O, divergence, bad checkpoint),
2 bad arguments. The LISN_THREADS environment variable caps evaluation
worker threads (default 1, which keeps runs deterministic).
"""
from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .schemas import (
    ComplexityRequest,
    EvalRequest,
    SelftestRequest,
    TrainRequest,
    UpscaleRequest,
)
from .training import CheckpointError, TrainingDiverged
from .workflows import run_complexity, run_eval, run_selftest, run_train, run_upscale


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="lisn",
        description="Lightweight information-split super-resolution for infrared images.",
    )
    parser.add_argument("--version", action="version", version=f"lisn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a directory of images")
    p.add_argument("--data", required=True, help="directory of PNG/PGM training images")
    p.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    p.add_argument("--epochs", required=True, type=int, help="number of training epochs")
    p.add_argument("--scale", type=int, choices=(2, 4), help="upscaling factor (default 4)")
    p.add_argument("--seed", type=int, help="seed for init and sampling (default 0)")
    p.add_argument("--config", help="flat key=value config file; flags override it")
    p.add_argument("--width", type=int, help="embedding width C")
    p.add_argument("--blocks", type=int, help="number of split blocks")
    p.add_argument("--variant", choices=("default", "no_split", "no_rdb", "no_cca"))
    p.add_argument("--batch", type=int, help="patches per batch")
    p.add_argument("--patch", type=int, help="LR patch size")
    p.add_argument("--batches-per-epoch", type=int)
    p.add_argument("--lr", type=float, help="base learning rate")
    p.add_argument("--no-augment", action="store_true", help="disable dihedral augmentation")

    p = sub.add_parser("eval", help="report average PSNR/SSIM of a checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="directory of evaluation images")
    p.add_argument("--shave", type=int, default=0, help="border pixels excluded from metrics")
    p.add_argument("--json", help="write per-image and aggregate records as JSON lines")

    p = sub.add_parser("upscale", help="super-resolve one image")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--input", required=True, help="input image path")
    p.add_argument("--output", required=True, help="output image path")

    p = sub.add_parser("complexity", help="analytic parameter/FLOP report")
    p.add_argument("--scale", type=int, choices=(2, 4), default=4)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--blocks", type=int, default=6)
    p.add_argument("--variant", choices=("default", "no_split", "no_rdb", "no_cca"),
                   default="default")
    p.add_argument("--input-size", type=int, default=64, help="LR input side length")
    p.add_argument("--json", help="write the report as JSON")

    p = sub.add_parser("selftest", help="run the release-gate battery")
    p.add_argument("--suite", action="append", dest="suites",
                   help="run only the named suite (repeatable)")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _cmd_train(args):
    resp = run_train(TrainRequest(
        data_dir=args.data, out_dir=args.out, epochs=args.epochs,
        scale=args.scale, seed=args.seed, config_file=args.config,
        width=args.width, n_blocks=args.blocks, variant=args.variant,
        batch_size=args.batch, patch_size=args.patch,
        batches_per_epoch=args.batches_per_epoch, base_lr=args.lr,
        augment=False if args.no_augment else None,
    ))
    print(f"checkpoint: {resp.checkpoint_dir}")
    print(f"log: {resp.log_path}")
    if resp.final_loss is not None:
        print(f"final loss: {resp.final_loss:.6f}")
    return 0


def _cmd_eval(args):
    resp = run_eval(EvalRequest(checkpoint=args.ckpt, data_dir=args.data,
                                shave=args.shave, json_out=args.json))
    print(f"{'image':<40} {'psnr':>9} {'ssim':>8}")
    for row in resp.rows:
        print(f"{row.path:<40} {row.psnr:>9.4f} {row.ssim:>8.4f}")
    print(f"{'mean':<40} {resp.mean_psnr:>9.4f} {resp.mean_ssim:>8.4f}")
    return 0


def _cmd_upscale(args):
    resp = run_upscale(UpscaleRequest(checkpoint=args.ckpt, input=args.input,
                                      output=args.output))
    print(f"wrote {resp.output} ({resp.width}x{resp.height}, x{resp.scale})")
    return 0


def _cmd_complexity(args):
    resp = run_complexity(ComplexityRequest(
        scale=args.scale, width=args.width, blocks=args.blocks,
        variant=args.variant, input_size=args.input_size,
    ))
    width = max(len(r.name) for r in resp.rows) + 2
    print(f"{'layer':<{width}} {'params':>10} {'flops':>14}")
    for r in resp.rows:
        print(f"{r.name:<{width}} {r.params:>10} {r.flops:>14}")
    print(f"{'total':<{width}} {resp.total_params:>10} {resp.total_flops:>14}")
    print(f"input {resp.input_hw[0]}x{resp.input_hw[1]}, "
          f"MAC={resp.conventions['mac_flops']} FLOPs, "
          f"constant gate-path FLOPs: {resp.total_const_flops}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(resp.model_dump(), fh, indent=1, sort_keys=True)
    return 0


def _cmd_selftest(args):
    resp = run_selftest(SelftestRequest(suites=args.suites))
    for r in resp.results:
        mark = "PASS" if r.ok else "FAIL"
        print(f"[{mark}] {r.suite:<26} {r.seconds:7.2f}s  {r.detail}")
    print("all suites passed" if resp.ok else "FAILED")
    return 0 if resp.ok else 1


def _cmd_serve(args):
    import uvicorn

    from .service import app
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


_HANDLERS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "upscale": _cmd_upscale,
    "complexity": _cmd_complexity,
    "selftest": _cmd_selftest,
    "serve": _cmd_serve,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ValueError, CheckpointError, TrainingDiverged, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
