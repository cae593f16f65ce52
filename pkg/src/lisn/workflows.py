"""Workflow functions behind the service endpoints and the CLI subcommands.

Each function takes a request model, does the work against the local
filesystem, and returns a response model. Bad inputs raise ValueError
subclasses; callers map those to HTTP 400 or exit code 1.
"""
from __future__ import annotations

import math
from pathlib import Path

from . import __version__
from .config import LisnConfig, apply_overrides, load_config_file
from .complexity import complexity_report
from .data import Dataset, load_image, save_image
from .evaluation import evaluate
from .model import build_lisn
from .schemas import (
    ComplexityRequest,
    ComplexityResponse,
    ComplexityRow,
    EvalRequest,
    EvalResponse,
    HealthResponse,
    ImageMetrics,
    SelftestRequest,
    SelftestResponse,
    SuiteResult,
    TrainRequest,
    TrainResponse,
    UpscaleRequest,
    UpscaleResponse,
)
from .training import TrainOptions, load_checkpoint, train

__all__ = [
    "health",
    "run_train",
    "run_eval",
    "run_upscale",
    "run_complexity",
    "run_selftest",
]

_FINITE_CAP = 1e9  # JSON-safe stand-in for infinite PSNR rows


def health():
    return HealthResponse(status="ok", version=__version__)


def _resolve_train(req: TrainRequest):
    file_values = load_config_file(req.config_file) if req.config_file else {}
    model_values = dict(file_values)
    for key, value in (("scale", req.scale), ("width", req.width),
                       ("n_blocks", req.n_blocks), ("variant", req.variant)):
        if value is not None:
            model_values[key] = value
    config = apply_overrides(LisnConfig(), model_values)

    options = TrainOptions()
    for key in ("batch_size", "patch_size", "batches_per_epoch", "base_lr",
                "augment", "val_every", "checkpoint_every"):
        value = getattr(req, key, None)
        if value is None:
            value = file_values.get(key)
        if value is not None:
            setattr(options, key, value)
    epochs = req.epochs if req.epochs is not None else file_values.get("epochs", 0)
    seed = req.seed if req.seed is not None else file_values.get("seed", 0)
    return config, options, epochs, seed


def _write_resolved(path, config, options, epochs, seed):
    lines = [f"{k}={v}" for k, v in config.to_dict().items()]
    lines += [
        f"epochs={epochs}",
        f"seed={seed}",
        f"batch_size={options.batch_size}",
        f"patch_size={options.patch_size}",
        f"batches_per_epoch={options.batches_per_epoch}",
        f"base_lr={options.base_lr}",
        f"augment={options.augment}",
        f"val_every={options.val_every}",
        f"checkpoint_every={options.checkpoint_every}",
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def run_train(req: TrainRequest) -> TrainResponse:
    config, options, epochs, seed = _resolve_train(req)
    dataset = Dataset.open(req.data_dir)
    if len(dataset) == 0:
        raise ValueError(f"no usable images under {req.data_dir}")
    out_dir = Path(req.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = _write_resolved(out_dir / "resolved_config.txt", config, options, epochs, seed)
    result = train(config, dataset, epochs, seed, out_dir, options=options)
    final_loss = result.final_loss if math.isfinite(result.final_loss) else None
    return TrainResponse(
        checkpoint_dir=str(result.checkpoint_dir),
        epochs_run=result.epochs_run,
        final_loss=final_loss,
        log_path=str(out_dir / "log.jsonl"),
        resolved_config_path=str(resolved),
    )


def run_eval(req: EvalRequest) -> EvalResponse:
    model, _, _ = load_checkpoint(req.checkpoint)
    scale = model.config.scale
    dataset = Dataset.open(req.data_dir)
    report = evaluate(model, dataset, scale, shave=req.shave, model_id=str(req.checkpoint))
    if req.json_out:
        Path(req.json_out).write_text(report.to_jsonl(), encoding="utf-8")
    rows = [
        ImageMetrics(path=r["path"],
                     psnr=r["psnr"] if math.isfinite(r["psnr"]) else _FINITE_CAP,
                     ssim=r["ssim"])
        for r in report.rows
    ]
    return EvalResponse(
        scale=scale,
        model_id=report.model_id,
        shave=report.shave,
        rows=rows,
        mean_psnr=report.mean_psnr if math.isfinite(report.mean_psnr) else _FINITE_CAP,
        mean_ssim=report.mean_ssim,
    )


def run_upscale(req: UpscaleRequest) -> UpscaleResponse:
    model, _, _ = load_checkpoint(req.checkpoint)
    sample = load_image(req.input)
    sr = model(sample.hr)
    save_image(sr, req.output)
    return UpscaleResponse(
        output=str(req.output),
        scale=model.config.scale,
        height=sr.shape[2],
        width=sr.shape[3],
    )


def run_complexity(req: ComplexityRequest) -> ComplexityResponse:
    config = LisnConfig(scale=req.scale, width=req.width,
                        n_blocks=req.blocks, variant=req.variant)
    model = build_lisn(config, seed=0)
    report = complexity_report(model, (req.input_size, req.input_size))
    return ComplexityResponse(
        input_hw=list(report.input_hw),
        rows=[
            ComplexityRow(name=r.name, params=r.params, flops=r.flops,
                          const_flops=r.const_flops)
            for r in report.rows
        ],
        total_params=report.total_params,
        total_flops=report.total_flops,
        total_const_flops=report.total_const_flops,
        conventions=report.conventions,
    )


def run_selftest(req: SelftestRequest | None = None) -> SelftestResponse:
    from .selftest import run_suites

    names = req.suites if req is not None else None
    ok, results = run_suites(names)
    return SelftestResponse(ok=ok, results=[SuiteResult(**r) for r in results])
