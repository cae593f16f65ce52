"""HTTP service exposing the training, evaluation, upscaling, profiling,
and selftest workflows. Paths in requests are resolved on the server's
filesystem; the CLI drives the same workflow functions in process."""
from __future__ import annotations

from fastapi import FastAPI, HTTPException

from . import __version__, workflows
from .schemas import (
    ComplexityRequest,
    ComplexityResponse,
    EvalRequest,
    EvalResponse,
    HealthResponse,
    SelftestRequest,
    SelftestResponse,
    TrainRequest,
    TrainResponse,
    UpscaleRequest,
    UpscaleResponse,
)
from .training import CheckpointError, TrainingDiverged

app = FastAPI(
    title="lisn",
    version=__version__,
    description="Lightweight information-split super-resolution for infrared images.",
)


def _run(fn, *args):
    try:
        return fn(*args)
    except (ValueError, CheckpointError, FileNotFoundError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    except TrainingDiverged as exc:
        raise HTTPException(status_code=500, detail=str(exc)) from exc


@app.get("/health", response_model=HealthResponse)
def health():
    return workflows.health()


@app.post("/train", response_model=TrainResponse)
def train(req: TrainRequest):
    return _run(workflows.run_train, req)


@app.post("/eval", response_model=EvalResponse)
def evaluate(req: EvalRequest):
    return _run(workflows.run_eval, req)


@app.post("/upscale", response_model=UpscaleResponse)
def upscale(req: UpscaleRequest):
    return _run(workflows.run_upscale, req)


@app.post("/complexity", response_model=ComplexityResponse)
def complexity(req: ComplexityRequest):
    return _run(workflows.run_complexity, req)


@app.post("/selftest", response_model=SelftestResponse)
def selftest(req: SelftestRequest | None = None):
    return workflows.run_selftest(req)
