"""FastAPI app factory for the run control plane.

Runs execute synchronously inside the request: the intended deployments are
local experiment drivers and test harnesses, where blocking until the round
loop finishes is the useful behavior.
"""
from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import PlainTextResponse

from ..errors import ConfigError, FedTopoError, NotFoundError
from ..manifest import apply_overrides, validate_manifest
from ..repository import Repository
from ..reporting import render_metrics_csv
from ..runner import run_from_manifest
from ..transport.envelope import params_to_wire
from .schemas import (
    ArtifactResponse,
    MetricRow,
    MetricsResponse,
    RunDetail,
    RunList,
    RunRequest,
    RunStatus,
    ValidateRequest,
    ValidateResponse,
)


def create_app(runs_root: str | Path) -> FastAPI:
    app = FastAPI(title="fedtopo", version="0.1.0")
    repository = Repository(runs_root)

    def run_status(run_id: str) -> RunStatus:
        status = repository.load_status(run_id)
        return RunStatus(
            run_id=run_id,
            status=str(status.get("status", "unknown")),
            rounds_completed=int(status.get("rounds_completed", 0)),
            final_accuracy=status.get("final_accuracy"),
            unpersisted=bool(status.get("unpersisted", False)),
        )

    @app.post("/manifests/validate", response_model=ValidateResponse)
    def validate(request: ValidateRequest) -> ValidateResponse:
        errors = validate_manifest(request.manifest)
        return ValidateResponse(valid=not errors, errors=errors)

    @app.post("/runs", response_model=RunStatus, status_code=201)
    def submit_run(request: RunRequest) -> RunStatus:
        try:
            raw = apply_overrides(request.manifest, request.overrides)
            summary = run_from_manifest(raw, runs_root, transport=request.transport)
        except ConfigError as exc:
            code = 409 if "already exists" in str(exc) else 400
            raise HTTPException(status_code=code, detail=str(exc)) from exc
        except FedTopoError as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc
        return RunStatus(
            run_id=summary.run_id,
            status=summary.status,
            rounds_completed=summary.rounds_completed,
            final_accuracy=summary.final_accuracy,
            unpersisted=summary.unpersisted,
        )

    @app.get("/runs", response_model=RunList)
    def list_runs() -> RunList:
        return RunList(runs=[run_status(run_id) for run_id in repository.list_runs()])

    @app.get("/runs/{run_id}", response_model=RunDetail)
    def run_detail(run_id: str) -> RunDetail:
        try:
            manifest = repository.load_manifest(run_id)
            status = run_status(run_id)
        except (NotFoundError, ConfigError) as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        return RunDetail(run_id=run_id, status=status, manifest=manifest)

    @app.get("/runs/{run_id}/metrics")
    def run_metrics(run_id: str, format: str = Query("json", pattern="^(json|csv)$")):
        try:
            records = repository.load_metrics(run_id)
        except (NotFoundError, ConfigError) as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        if format == "csv":
            return PlainTextResponse(render_metrics_csv(records), media_type="text/csv")
        rows = [MetricRow(**record.to_wire()) for record in records]
        return MetricsResponse(run_id=run_id, records=rows)

    @app.get("/runs/{run_id}/artifacts/{label}", response_model=ArtifactResponse)
    def run_artifact(run_id: str, label: str) -> ArtifactResponse:
        try:
            params = repository.load_artifact(run_id, label)
        except (NotFoundError, ConfigError) as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        return ArtifactResponse(run_id=run_id, label=label, params=params_to_wire(params))

    return app
