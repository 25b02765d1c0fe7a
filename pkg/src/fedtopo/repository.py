"""File-backed run repository: manifests, metrics, model artifacts.

Layout under the repository root:

    runs/<run_id>/manifest          canonical JSON of the submitted manifest
    runs/<run_id>/status            run state, updated as the run progresses
    runs/<run_id>/metrics.log       one canonical-JSON metric record per line
    runs/<run_id>/models/<label>    model params in the wire text encoding

Everything is written in the canonical text encoding, so identical values
always produce identical bytes and artifacts round-trip losslessly.  The
metrics log is append-only; records are flushed one line at a time so a
crash can lose at most the line being written.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import ConfigError, InvalidRecordError, NotFoundError
from .models import ModelParams
from .transport.envelope import canonical_json, canonical_loads, params_from_wire, params_to_wire

METRIC_NAMES = (
    "train_loss",
    "eval_loss",
    "aggregated_eval_loss",
    "global_accuracy",
    "accuracy",
    "participants",
    "duration_ms",
)

_SCOPE_RE = re.compile(r"^(global|cluster:\d+|client:[A-Za-z0-9._-]+)$")
_RUN_ID_RE = re.compile(r"^[A-Za-z0-9._-]+$")
_LABEL_RE = re.compile(r"^[A-Za-z0-9_-]+$")


@dataclass(frozen=True)
class MetricRecord:
    """One observation: (run, round, scope, metric) -> float value."""

    run_id: str
    round: int
    scope: str
    metric: str
    value: float

    def __post_init__(self) -> None:
        if self.metric not in METRIC_NAMES:
            raise InvalidRecordError(f"unknown metric {self.metric!r}")
        if not _SCOPE_RE.match(self.scope):
            raise InvalidRecordError(f"bad scope {self.scope!r}")
        if self.round < 0:
            raise InvalidRecordError("round must be >= 0")
        value = float(self.value)
        if not math.isfinite(value):
            raise InvalidRecordError("value must be finite")
        object.__setattr__(self, "value", value)

    def to_wire(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "round": self.round,
            "scope": self.scope,
            "metric": self.metric,
            "value": self.value,
        }

    @classmethod
    def from_wire(cls, obj: dict[str, Any]) -> "MetricRecord":
        try:
            return cls(
                run_id=obj["run_id"],
                round=int(obj["round"]),
                scope=obj["scope"],
                metric=obj["metric"],
                value=float(obj["value"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidRecordError(f"malformed metric record: {exc}") from exc


class Repository:
    """Run store rooted at a directory; every method is crash-tolerant
    in the sense that partial state is detectable, never silently wrong."""

    def __init__(self, root: Path | str) -> None:
        self.root = Path(root)
        self.runs_dir = self.root / "runs"
        self.runs_dir.mkdir(parents=True, exist_ok=True)

    def run_dir(self, run_id: str) -> Path:
        if not _RUN_ID_RE.match(run_id):
            raise ConfigError(f"run id {run_id!r} has unsafe characters")
        return self.runs_dir / run_id

    def run_exists(self, run_id: str) -> bool:
        return self.run_dir(run_id).exists()

    def list_runs(self) -> list[str]:
        return sorted(p.name for p in self.runs_dir.iterdir() if p.is_dir())

    def create_run(self, run_id: str, manifest: dict[str, Any]) -> Path:
        run_dir = self.run_dir(run_id)
        if run_dir.exists():
            raise ConfigError(f"run {run_id!r} already exists")
        (run_dir / "models").mkdir(parents=True)
        (run_dir / "manifest").write_text(canonical_json(manifest) + "\n")
        self.update_status(run_id, {"status": "running", "rounds_completed": 0})
        return run_dir

    def ensure_run(self, run_id: str) -> Path:
        """Bootstrap the run directory when no orchestrator created it.

        Used by a standalone collector process: manually placed runs have no
        parent to call create_run, and without the directory every later
        write would fail.  Existing runs are left untouched (no manifest is
        written here; only create_run knows the manifest)."""
        run_dir = self.run_dir(run_id)
        if not run_dir.exists():
            (run_dir / "models").mkdir(parents=True)
            self.update_status(run_id, {"status": "running", "rounds_completed": 0})
        return run_dir

    def load_manifest(self, run_id: str) -> dict[str, Any]:
        path = self.run_dir(run_id) / "manifest"
        if not path.exists():
            raise NotFoundError(f"run {run_id!r} not found")
        return canonical_loads(path.read_text())

    def update_status(self, run_id: str, status: dict[str, Any]) -> None:
        (self.run_dir(run_id) / "status").write_text(canonical_json(status) + "\n")

    def load_status(self, run_id: str) -> dict[str, Any]:
        path = self.run_dir(run_id) / "status"
        if not path.exists():
            raise NotFoundError(f"run {run_id!r} not found")
        return canonical_loads(path.read_text())

    def append_metric(self, record: MetricRecord) -> None:
        path = self.run_dir(record.run_id) / "metrics.log"
        line = canonical_json(record.to_wire())
        with path.open("a") as fh:
            fh.write(line + "\n")
            fh.flush()

    def load_metrics(self, run_id: str) -> list[MetricRecord]:
        path = self.run_dir(run_id) / "metrics.log"
        if not self.run_dir(run_id).exists():
            raise NotFoundError(f"run {run_id!r} not found")
        if not path.exists():
            return []
        records = []
        for line in path.read_text().splitlines():
            if line.strip():
                records.append(MetricRecord.from_wire(canonical_loads(line)))
        return records

    def store_artifact(self, run_id: str, label: str, params: ModelParams) -> Path:
        if not _LABEL_RE.match(label):
            raise ConfigError(f"artifact label {label!r} has unsafe characters")
        path = self.run_dir(run_id) / "models" / label
        path.write_text(canonical_json(params_to_wire(params)) + "\n")
        return path

    def load_artifact(self, run_id: str, label: str) -> ModelParams:
        if not _LABEL_RE.match(label):
            raise ConfigError(f"artifact label {label!r} has unsafe characters")
        path = self.run_dir(run_id) / "models" / label
        if not path.exists():
            raise NotFoundError(f"artifact {label!r} of run {run_id!r} not found")
        return params_from_wire(canonical_loads(path.read_text()))

    def list_artifacts(self, run_id: str) -> list[str]:
        models = self.run_dir(run_id) / "models"
        if not models.exists():
            raise NotFoundError(f"run {run_id!r} not found")
        return sorted(p.name for p in models.iterdir())
