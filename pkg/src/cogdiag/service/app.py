"""FastAPI application exposing the diagnosis engine.

Engine errors map to HTTP 400 with a payload carrying the CLI exit code:
``{"error": <class>, "message": <text>, "exit_code": <int>}``.
"""
from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, engine
from ..errors import CogdiagError
from .schemas import (
    BenchRequest,
    DiagnoseRequest,
    EvaluateRequest,
    HealthResponse,
    SynthRequest,
    SynthResponse,
    TrainRequest,
    TrainResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(title="cogdiag", version=__version__)

    @app.exception_handler(CogdiagError)
    async def engine_error_handler(request: Request, exc: CogdiagError) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content={
                "error": type(exc).__name__,
                "message": str(exc),
                "exit_code": exc.exit_code,
            },
        )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/synth", response_model=SynthResponse)
    def synth(req: SynthRequest) -> SynthResponse:
        result = engine.run_synth(
            learners=req.learners,
            items=req.items,
            seed=req.seed,
            out=req.out,
            density=req.density,
            params_out=req.params_out,
            qmatrix_out=req.qmatrix_out,
            concepts=req.concepts,
        )
        return SynthResponse(**result)

    @app.post("/train", response_model=TrainResponse)
    def train(req: TrainRequest) -> TrainResponse:
        split = req.split
        result = engine.run_train(
            model=req.model,
            responses=req.responses,
            out=req.out,
            qmatrix=req.qmatrix,
            log_out=req.log_out,
            lr=req.lr,
            epochs=req.epochs,
            batch_size=req.batch_size,
            seed=req.seed,
            alpha=req.alpha,
            scale=req.scale,
            bounds=req.bounds.model_dump() if req.bounds else None,
            dims=req.dims.model_dump() if req.dims else None,
            split=split.kind if split else None,
            ratios=split.ratios if split else (0.7, 0.1, 0.2),
            split_seed=split.seed if split else 0,
            holdout_frac=split.holdout_frac if split else 0.2,
            evidence_frac=split.evidence_frac if split else 0.8,
        )
        return TrainResponse(**result)

    @app.post("/diagnose")
    def diagnose(req: DiagnoseRequest) -> dict:
        return engine.run_diagnose(
            model_path=req.model_path,
            responses=[(r.item_id, r.score) for r in req.responses],
            out=req.out,
        )

    @app.post("/evaluate")
    def evaluate(req: EvaluateRequest) -> dict:
        return engine.run_evaluate(
            model_path=req.model_path,
            responses=req.responses,
            qmatrix=req.qmatrix,
            split=req.split,
            ratios=req.ratios,
            split_seed=req.split_seed,
            holdout_frac=req.holdout_frac,
            evidence_frac=req.evidence_frac,
            threshold=req.threshold,
            with_ids=req.ids,
            augment=req.augment,
            with_doc=req.doc,
            lr=req.lr,
            epochs=req.epochs,
            batch_size=req.batch_size,
            out=req.out,
        )

    @app.post("/bench")
    def bench(req: BenchRequest) -> dict:
        return engine.run_bench(
            model_path=req.model_path,
            baseline=req.baseline,
            responses=req.responses,
            qmatrix=req.qmatrix,
            new_learners=req.new_learners,
            lr=req.lr,
            epochs=req.epochs,
            batch_size=req.batch_size,
            seed=req.seed,
            repeat=req.repeat,
            out=req.out,
        )

    return app


app = create_app()
