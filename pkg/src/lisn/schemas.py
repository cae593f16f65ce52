"""Request/response models shared by the HTTP service and the CLI."""
from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class TrainRequest(BaseModel):
    data_dir: str
    out_dir: str
    epochs: int = Field(ge=0)
    scale: Optional[int] = None
    seed: Optional[int] = None
    config_file: Optional[str] = None
    # model overrides (flags beat config-file values)
    width: Optional[int] = None
    n_blocks: Optional[int] = None
    variant: Optional[str] = None
    # loop overrides
    batch_size: Optional[int] = None
    patch_size: Optional[int] = None
    batches_per_epoch: Optional[int] = None
    base_lr: Optional[float] = None
    augment: Optional[bool] = None
    val_every: Optional[int] = None
    checkpoint_every: Optional[int] = None


class TrainResponse(BaseModel):
    checkpoint_dir: str
    epochs_run: int
    final_loss: Optional[float]
    log_path: str
    resolved_config_path: str


class EvalRequest(BaseModel):
    checkpoint: str
    data_dir: str
    shave: int = Field(default=0, ge=0)
    json_out: Optional[str] = None


class ImageMetrics(BaseModel):
    path: str
    psnr: float
    ssim: float


class EvalResponse(BaseModel):
    scale: int
    model_id: str
    shave: int
    rows: list[ImageMetrics]
    mean_psnr: float
    mean_ssim: float


class UpscaleRequest(BaseModel):
    checkpoint: str
    input: str
    output: str


class UpscaleResponse(BaseModel):
    output: str
    scale: int
    width: int
    height: int


class ComplexityRequest(BaseModel):
    scale: int = 4
    width: int = 64
    blocks: int = 6
    variant: str = "default"
    input_size: int = Field(default=64, ge=1)


class ComplexityRow(BaseModel):
    name: str
    params: int
    flops: int
    const_flops: int


class ComplexityResponse(BaseModel):
    input_hw: list[int]
    rows: list[ComplexityRow]
    total_params: int
    total_flops: int
    total_const_flops: int
    conventions: dict


class SuiteResult(BaseModel):
    suite: str
    ok: bool
    seconds: float
    detail: str


class SelftestRequest(BaseModel):
    suites: Optional[list[str]] = None


class SelftestResponse(BaseModel):
    ok: bool
    results: list[SuiteResult]
