"""Request and response bodies for the HTTP control plane."""
from __future__ import annotations

from typing import Any

from pydantic import BaseModel, ConfigDict, Field


class ValidateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    manifest: dict[str, Any]


class ValidateResponse(BaseModel):
    valid: bool
    errors: list[str]


class RunRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    manifest: dict[str, Any]
    overrides: list[str] = Field(default_factory=list)
    transport: str | None = None


class RunStatus(BaseModel):
    run_id: str
    status: str
    rounds_completed: int
    final_accuracy: float | None = None
    unpersisted: bool = False


class RunList(BaseModel):
    runs: list[RunStatus]


class RunDetail(BaseModel):
    run_id: str
    status: RunStatus
    manifest: dict[str, Any]


class MetricRow(BaseModel):
    run_id: str
    round: int
    scope: str
    metric: str
    value: float


class MetricsResponse(BaseModel):
    run_id: str
    records: list[MetricRow]


class ArtifactResponse(BaseModel):
    run_id: str
    label: str
    params: dict[str, Any]
