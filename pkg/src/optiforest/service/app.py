"""HTTP service exposing fitting, scoring, evaluation, and theory reports.

Models live in an in-memory registry keyed by a generated id; they do not
survive a restart.  Client mistakes (ragged matrices, wrong feature
counts, bad parameters) surface as 400s, unknown model ids as 404s.
"""

from __future__ import annotations

import threading
import uuid
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.responses import JSONResponse

from ..data import DataMatrix
from ..errors import DataError
from ..evaluation import run_experiment
from ..forest import Forest, fit, score_all
from ..theory import efficiency_curve, theory_report
from .schemas import (
    CurvePoint,
    CurveResponse,
    EvaluateRequest,
    EvaluateResponse,
    FitRequest,
    FitResponse,
    ForestParams,
    HealthResponse,
    MetricStats,
    ModelInfo,
    ScoreRequest,
    ScoreResponse,
)


def _matrix(rows: list[list[float]], labels: Optional[list[int]] = None) -> DataMatrix:
    try:
        values = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"rows must form a rectangular numeric matrix: {exc}")
    if values.ndim != 2:
        raise DataError(f"rows must form a 2-d matrix, got shape {values.shape}")
    label_arr = None if labels is None else np.asarray(labels, dtype=np.int64)
    return DataMatrix(values=values, labels=label_arr)


def create_app() -> FastAPI:
    app = FastAPI(
        title="optiforest",
        description="Isolation forest anomaly scoring with optimal multi-fork trees.",
        version="0.1.0",
    )
    registry: dict[str, Forest] = {}
    lock = threading.Lock()

    @app.exception_handler(DataError)
    async def _data_error(request: Request, exc: DataError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    def _lookup(model_id: str) -> Forest:
        with lock:
            forest = registry.get(model_id)
        if forest is None:
            raise HTTPException(status_code=404, detail=f"no model with id {model_id!r}")
        return forest

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok")

    @app.post("/models", response_model=FitResponse, status_code=201)
    def fit_model(request: FitRequest) -> FitResponse:
        data = _matrix(request.rows)
        forest = fit(data, request.params.to_config(), jobs=request.jobs)
        model_id = uuid.uuid4().hex[:12]
        with lock:
            registry[model_id] = forest
        return FitResponse(
            model_id=model_id,
            tree_count=len(forest.trees),
            n_features=forest.n_features,
            psi_effective=forest.psi_effective,
            epsilon_used=forest.epsilon_used,
        )

    @app.get("/models/{model_id}", response_model=ModelInfo)
    def model_info(model_id: str) -> ModelInfo:
        forest = _lookup(model_id)
        return ModelInfo(
            model_id=model_id,
            params=ForestParams.from_config(forest.config),
            tree_count=len(forest.trees),
            n_features=forest.n_features,
            psi_effective=forest.psi_effective,
            epsilon_used=forest.epsilon_used,
        )

    @app.post("/models/{model_id}/scores", response_model=ScoreResponse)
    def score_rows(model_id: str, request: ScoreRequest) -> ScoreResponse:
        forest = _lookup(model_id)
        data = _matrix(request.rows)
        scores = score_all(forest, data)
        return ScoreResponse(model_id=model_id, scores=[float(s) for s in scores])

    @app.delete("/models/{model_id}", status_code=204)
    def delete_model(model_id: str) -> Response:
        with lock:
            found = registry.pop(model_id, None)
        if found is None:
            raise HTTPException(status_code=404, detail=f"no model with id {model_id!r}")
        return Response(status_code=204)

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate(request: EvaluateRequest) -> EvaluateResponse:
        data = _matrix(request.rows, request.labels)
        report = run_experiment(
            data,
            request.params.to_config(),
            repeats=request.repeats,
            jobs=request.jobs,
        )
        return EvaluateResponse(
            auc_roc=MetricStats(**report.auc_roc.to_dict()),
            auc_pr=MetricStats(**report.auc_pr.to_dict()),
            runtime_s=report.runtime_s,
            config=report.config,
        )

    @app.get("/theory/report")
    def theory() -> dict:
        return theory_report()

    @app.get("/theory/curve", response_model=CurveResponse)
    def curve(area: float = 6.0) -> CurveResponse:
        if area <= 0:
            raise HTTPException(status_code=400, detail="area must be positive")
        points = efficiency_curve(area=area)
        return CurveResponse(
            area=area,
            points=[CurvePoint(v=float(v), efficiency=float(e)) for v, e in points],
        )

    return app


app = create_app()
