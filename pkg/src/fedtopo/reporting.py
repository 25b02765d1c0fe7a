"""Render stored metric records for export."""
from __future__ import annotations

import csv
import io

from .repository import MetricRecord
from .transport.envelope import canonical_json

CSV_HEADER = "run_id,round,scope,metric,value"


def render_metrics_csv(records: list[MetricRecord]) -> str:
    """CSV text, insertion order, header exactly `run_id,round,scope,metric,value`."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER.split(","))
    for record in records:
        writer.writerow([record.run_id, record.round, record.scope, record.metric, record.value])
    return buffer.getvalue()


def render_metrics_jsonlines(records: list[MetricRecord]) -> str:
    """One canonical-JSON object per line, byte-identical to the stored log."""
    return "".join(canonical_json(record.to_wire()) + "\n" for record in records)
