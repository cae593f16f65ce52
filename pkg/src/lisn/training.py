"""Adam optimization, the halving/reset learning-rate schedule, checkpoint
persistence, and the training loop."""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import LisnConfig
from .data import sample_batch
from .model import build_lisn, lisn_loss
from .tensor import Tape, Tensor

__all__ = [
    "AdamState",
    "adam_apply",
    "lr_at",
    "TrainOptions",
    "TrainResult",
    "TrainingDiverged",
    "CheckpointError",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

FORMAT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite."""


class CheckpointError(ValueError):
    pass


def lr_at(epoch, base=2e-4):
    """Halve every 200 epochs, reset to ``base`` every 1000."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return base * 0.5 ** ((epoch % 1000) // 200)


class AdamState:
    """Per-parameter first/second moments plus a shared step counter."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}


def adam_apply(params, state, lr):
    """Bias-corrected Adam update, in place on the parameter values."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p in params:
        g = p.grad
        m = state.m[p.name]
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# checkpoint format: directory {manifest.json, params.bin}; params.bin holds
# one record per tensor in manifest order:
#   u32 name length, name bytes, u32 rank, u32 dims..., float32 LE payload


def _write_record(fh, name, arr):
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_record(fh):
    raw = fh.read(4)
    if not raw:
        return None

    def take(nbytes):
        chunk = fh.read(nbytes)
        if len(chunk) != nbytes:
            raise CheckpointError("params.bin truncated mid-record")
        return chunk

    if len(raw) != 4:
        raise CheckpointError("params.bin truncated mid-record")
    (name_len,) = struct.unpack("<I", raw)
    name = take(name_len).decode("utf-8")
    (rank,) = struct.unpack("<I", take(4))
    dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
    count = int(np.prod(dims)) if dims else 1
    payload = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims)
    return name, payload


def save_checkpoint(model, path, epoch=0, state=None):
    """Persist parameters (and optimizer moments when given) atomically."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    params = model.parameters()
    entries = [(p.name, p.data) for p in params]
    optim_entries = []
    if state is not None:
        for p in params:
            optim_entries.append((f"adam.m.{p.name}", state.m[p.name]))
            optim_entries.append((f"adam.v.{p.name}", state.v[p.name]))
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "seed": model.seed,
        "epoch": int(epoch),
        "optimizer_included": state is not None,
        "optimizer_step": state.t if state is not None else None,
        "parameters": [{"name": n, "shape": list(a.shape)} for n, a in entries],
        "optimizer_tensors": [{"name": n, "shape": list(a.shape)} for n, a in optim_entries],
    }
    manifest_tmp = path / "manifest.json.tmp"
    manifest_tmp.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    os.replace(manifest_tmp, path / "manifest.json")
    bin_tmp = path / "params.bin.tmp"
    with open(bin_tmp, "wb") as fh:
        for name, arr in entries + optim_entries:
            _write_record(fh, name, arr)
    os.replace(bin_tmp, path / "params.bin")
    return path


def load_checkpoint(path, expect_config=None):
    """Rebuild the model (and optimizer state, if stored) from a checkpoint.

    Returns (model, state, epoch); ``state`` is None when the checkpoint
    carries no optimizer moments.
    """
    path = Path(path)
    manifest_file = path / "manifest.json"
    if not manifest_file.is_file():
        raise CheckpointError(f"no manifest.json under {path}")
    manifest = json.loads(manifest_file.read_text(encoding="utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {manifest.get('format_version')} "
            f"is not supported (expected {FORMAT_VERSION})"
        )
    config = LisnConfig.from_dict(manifest["config"])
    if expect_config is not None and config != expect_config:
        for key, value in expect_config.to_dict().items():
            stored = manifest["config"].get(key)
            if stored != value:
                raise CheckpointError(
                    f"checkpoint config mismatch: {key} is {stored}, expected {value}"
                )
    model = build_lisn(config, seed=manifest.get("seed", 0))
    by_name = model.param_dict()

    expected = [(e["name"], tuple(e["shape"])) for e in manifest["parameters"]]
    expected += [(e["name"], tuple(e["shape"])) for e in manifest["optimizer_tensors"]]
    loaded = {}
    with open(path / "params.bin", "rb") as fh:
        for want_name, want_shape in expected:
            rec = _read_record(fh)
            if rec is None:
                raise CheckpointError(f"params.bin truncated: missing tensor {want_name}")
            name, payload = rec
            if name != want_name:
                raise CheckpointError(
                    f"params.bin out of order: found {name}, expected {want_name}"
                )
            if payload.shape != want_shape:
                raise CheckpointError(
                    f"tensor {name} has shape {payload.shape}, manifest says {want_shape}"
                )
            loaded[name] = payload

    for p in model.parameters():
        if p.name not in loaded:
            raise CheckpointError(f"checkpoint missing parameter {p.name}")
        if loaded[p.name].shape != p.data.shape:
            raise CheckpointError(
                f"parameter {p.name} has shape {loaded[p.name].shape}, "
                f"model expects {p.data.shape}"
            )
        p.data[...] = loaded[p.name]

    state = None
    if manifest.get("optimizer_included"):
        state = AdamState(model.parameters())
        state.t = int(manifest["optimizer_step"])
        for p in model.parameters():
            state.m[p.name][...] = loaded[f"adam.m.{p.name}"]
            state.v[p.name][...] = loaded[f"adam.v.{p.name}"]
    return model, state, int(manifest["epoch"])


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainOptions:
    """Desk-scale loop knobs; an epoch is ``batches_per_epoch`` batches."""

    batches_per_epoch: int = 100
    batch_size: int = 16
    patch_size: int = 48
    base_lr: float = 2e-4
    augment: bool = True
    val_every: int = 10
    checkpoint_every: int = 0  # 0 = final checkpoint only
    stop_at_psnr: float = 0.0  # 0 = never stop early


@dataclass
class TrainResult:
    checkpoint_dir: Path
    epochs_run: int
    final_loss: float
    log: list = field(default_factory=list)


def _epoch_rng(seed, epoch):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch), 0x5A]))


def _stack(patches, attr):
    return Tensor(np.concatenate([getattr(p, attr).data for p in patches], axis=0))


def _train_psnr(model, dataset, scale):
    """Mean PSNR of the model over full dataset images (training signal)."""
    from .data import degrade
    from .evaluation import psnr

    values = []
    for s in dataset:
        h = s.height - s.height % scale
        w = s.width - s.width % scale
        hr = Tensor(s.hr.data[:, :, :h, :w])
        sr = model(degrade(hr, scale))
        values.append(psnr(sr, hr))
    finite = [v for v in values if np.isfinite(v)]
    return float(np.mean(finite)) if finite else float("inf")


def train(config, dataset, epochs, seed, out_dir, options=TrainOptions(),
          model=None, state=None, start_epoch=0):
    """Run the training loop, writing checkpoints and a JSON-lines log.

    Fully deterministic under ``seed``: batches are drawn from a stream
    derived from (seed, epoch), so a run resumed from a checkpoint with
    optimizer state matches the uninterrupted run step for step.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if model is None:
        model = build_lisn(config, seed=seed)
    if state is None:
        state = AdamState(model.parameters())
    params = model.parameters()
    log = []
    log_path = out_dir / "log.jsonl"
    log_fh = open(log_path, "a", encoding="utf-8")

    def emit(record):
        log.append(record)
        log_fh.write(json.dumps(record, sort_keys=True) + "\n")

    last_loss = float("nan")
    epoch = start_epoch
    try:
        for epoch in range(start_epoch, epochs):
            rng = _epoch_rng(seed, epoch)
            lr = lr_at(epoch, options.base_lr)
            epoch_losses = []
            for step in range(options.batches_per_epoch):
                patches = sample_batch(
                    dataset, options.batch_size, options.patch_size,
                    config.scale, rng, use_augment=options.augment,
                )
                lr_batch = _stack(patches, "lr")
                hr_batch = _stack(patches, "hr")
                model.zero_grad()
                tape = Tape()
                with tape:
                    sr = model(lr_batch)
                    loss = lisn_loss(sr, hr_batch, config.alpha1)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, step {step}"
                    )
                tape.backward(loss)
                adam_apply(params, state, lr)
                epoch_losses.append(value)
            last_loss = float(np.mean(epoch_losses))
            record = {"epoch": epoch, "lr": lr, "loss": last_loss}
            is_last = epoch == epochs - 1
            if options.val_every and ((epoch + 1) % options.val_every == 0 or is_last):
                record["train_psnr"] = _train_psnr(model, dataset, config.scale)
            emit(record)
            if options.checkpoint_every and (epoch + 1) % options.checkpoint_every == 0:
                save_checkpoint(model, out_dir / f"checkpoint_epoch{epoch + 1:05d}",
                                epoch=epoch + 1, state=state)
            if options.stop_at_psnr and record.get("train_psnr", 0.0) > options.stop_at_psnr:
                epoch += 1
                break
        else:
            epoch = epochs
    finally:
        log_fh.close()

    final = save_checkpoint(model, out_dir / "checkpoint_final", epoch=epoch, state=state)
    return TrainResult(checkpoint_dir=final, epochs_run=epoch - start_epoch,
                       final_loss=last_loss, log=log)
