"""PSNR and SSIM metrics plus a dataset-level evaluation runner."""
from __future__ import annotations

import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import degrade
from .tensor import Tensor

__all__ = ["psnr", "ssim", "evaluate", "MetricReport"]


def psnr(a, b, peak=1.0):
    """10*log10(peak^2 / MSE) in dB; +inf when the images are identical."""
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError(f"psnr: peak must be positive, got {peak}")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size=11, sigma=1.5):
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, window):
    """Separable valid-mode correlation with a 1-D window on both axes."""
    from numpy.lib.stride_tricks import sliding_window_view

    rows = sliding_window_view(img, window.size, axis=0) @ window
    return sliding_window_view(rows, window.size, axis=1) @ window


def ssim(a, b, peak=1.0):
    """Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), valid positions,
    C1=(0.01*peak)^2, C2=(0.03*peak)^2, averaged over batch and channels."""
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    xa = a.data.astype(np.float64)
    xb = b.data.astype(np.float64)
    if xa.ndim == 2:
        xa, xb = xa[None, None], xb[None, None]
    if xa.shape[2] < 11 or xa.shape[3] < 11:
        raise ValueError(f"ssim: image {xa.shape[2]}x{xa.shape[3]} smaller than the 11x11 window")
    window = _gaussian_window()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    values = []
    for n in range(xa.shape[0]):
        for c in range(xa.shape[1]):
            pa, pb = xa[n, c], xb[n, c]
            mu_a = _filter_valid(pa, window)
            mu_b = _filter_valid(pb, window)
            var_a = _filter_valid(pa * pa, window) - mu_a * mu_a
            var_b = _filter_valid(pb * pb, window) - mu_b * mu_b
            cov = _filter_valid(pa * pb, window) - mu_a * mu_b
            num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
            den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
            values.append(np.mean(num / den))
    return float(np.mean(values))


@dataclass
class MetricReport:
    """Per-image rows plus arithmetic means; infinite PSNR rows are excluded
    from the mean with a warning."""

    scale: int
    model_id: str
    shave: int = 0
    rows: list = field(default_factory=list)

    @property
    def mean_psnr(self):
        finite = [r["psnr"] for r in self.rows if math.isfinite(r["psnr"])]
        return float(np.mean(finite)) if finite else math.inf

    @property
    def mean_ssim(self):
        return float(np.mean([r["ssim"] for r in self.rows])) if self.rows else math.nan

    def to_jsonl(self):
        lines = [
            json.dumps({**row, "kind": "image"}, sort_keys=True) for row in self.rows
        ]
        lines.append(
            json.dumps(
                {
                    "kind": "aggregate",
                    "scale": self.scale,
                    "model_id": self.model_id,
                    "shave": self.shave,
                    "images": len(self.rows),
                    "mean_psnr": self.mean_psnr,
                    "mean_ssim": self.mean_ssim,
                },
                sort_keys=True,
            )
        )
        return "\n".join(lines) + "\n"

    def table(self):
        out = [f"{'image':<40} {'psnr':>9} {'ssim':>8}"]
        for r in self.rows:
            out.append(f"{r['path']:<40} {r['psnr']:>9.4f} {r['ssim']:>8.4f}")
        out.append(f"{'mean':<40} {self.mean_psnr:>9.4f} {self.mean_ssim:>8.4f}")
        return "\n".join(out)


def _shave(arr, b):
    return arr[:, :, b:-b, b:-b] if b else arr


def evaluate(model_fn, samples, scale, shave=0, model_id="model"):
    """Degrade each image, super-resolve it, and score against the original.

    ``model_fn`` maps an LR tensor [1,1,h,w] to an SR tensor; images are
    cropped to a multiple of ``scale`` first. Honors LISN_THREADS for
    per-image parallelism (default 1).
    """
    samples = list(samples)
    if not samples:
        raise ValueError("evaluate: no evaluable images")

    def score(sample):
        h = sample.height - sample.height % scale
        w = sample.width - sample.width % scale
        hr = Tensor(sample.hr.data[:, :, :h, :w])
        sr = model_fn(degrade(hr, scale))
        sr_c = Tensor(_shave(sr.data, shave))
        hr_c = Tensor(_shave(hr.data, shave))
        p = psnr(sr_c, hr_c)
        if not math.isfinite(p):
            warnings.warn(f"{sample.path}: identical images, PSNR is infinite; "
                          "excluded from the mean")
        return {"path": sample.path, "psnr": p, "ssim": ssim(sr_c, hr_c)}

    workers = int(os.environ.get("LISN_THREADS", "1") or "1")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(score, samples))
    else:
        rows = [score(s) for s in samples]
    return MetricReport(scale=scale, model_id=model_id, shave=shave, rows=rows)
