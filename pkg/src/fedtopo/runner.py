"""Run execution: one manifest in, one RunSummary out.

The in-process path hosts every node inside the deterministic simulator.
The socket path launches one OS process per node via the `serve-collector`
and `serve-localops` entry points and recovers the outcome from the run's
status record.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import socket as socket_module
import subprocess
import sys
import tempfile
from pathlib import Path
from typing import Any

from .collector import STATUS_DONE, STATUS_FAILED, RunSummary, TrainingCollector
from .errors import ConfigError, NotFoundError
from .localops import LocalOpsConfig, run_local_ops
from .manifest import (
    RunManifest,
    build_holdout,
    collector_config_from_wire,
    collector_config_to_wire,
    localops_config_from_wire,
    localops_config_to_wire,
    manifest_to_wire,
    parse_manifest,
    propagate_config,
)
from .repository import Repository
from .transport.sim import SimNet
from .transport.sockets import SocketClientNetwork, SocketServerNetwork

log = logging.getLogger(__name__)

LOCALHOST = "127.0.0.1"
COLLECTOR_WAIT_S = 600
CHILD_WAIT_S = 60


def run_from_manifest(
    raw: dict[str, Any],
    runs_root: str | Path,
    transport: str | None = None,
) -> RunSummary:
    """Validate, persist, and execute one run described by a raw manifest."""
    manifest = parse_manifest(raw)
    if transport is not None:
        if transport not in ("inproc", "socket"):
            raise ConfigError(f"unknown transport {transport!r}")
        manifest = dataclasses.replace(
            manifest, transport=dataclasses.replace(manifest.transport, kind=transport)
        )
    repository = Repository(runs_root)
    repository.create_run(manifest.run_id, manifest_to_wire(manifest))
    if manifest.transport.kind == "inproc":
        return _run_inproc(manifest, repository)
    return _run_socket(manifest, repository, runs_root)


def _run_inproc(manifest: RunManifest, repository: Repository) -> RunSummary:
    collector_config, node_configs = propagate_config(manifest)
    sim = SimNet(run_seed=manifest.seed, faults=list(manifest.transport.faults))

    def collector_main(net):
        return TrainingCollector(collector_config, net, repository).run()

    sim.add_node(collector_config.plan.collector_id, collector_main)
    for config in node_configs:
        sim.add_node(config.client_id, lambda net, c=config: run_local_ops(c, net))
    results = sim.run()
    summary = results[collector_config.plan.collector_id]
    assert isinstance(summary, RunSummary)
    return summary


# -- socket orchestration --------------------------------------------------------


def _free_port() -> int:
    with socket_module.socket() as probe:
        probe.bind((LOCALHOST, 0))
        return probe.getsockname()[1]


def _run_socket(
    manifest: RunManifest, repository: Repository, runs_root: str | Path
) -> RunSummary:
    collector_config, node_configs = propagate_config(manifest)
    fixed = manifest.transport.port
    base_port = fixed or _free_port()
    mid_ports = {
        mid: base_port + 1 + j if fixed else _free_port()
        for j, mid in enumerate(collector_config.plan.mid_ids)
    }

    with tempfile.TemporaryDirectory(prefix="fedtopo-run-") as scratch:
        scratch_dir = Path(scratch)
        collector_file = scratch_dir / "collector.json"
        collector_file.write_text(
            json.dumps(
                collector_config_to_wire(
                    collector_config,
                    build_holdout(manifest),
                    listen_port=base_port,
                    runs_root=str(runs_root),
                )
            )
        )
        node_files: list[tuple[str, Path]] = []
        for config in node_configs:
            if config.role == "mid":
                wire = localops_config_to_wire(
                    config, LOCALHOST, base_port, listen_port=mid_ports[config.client_id]
                )
            else:
                parent = config.parent_id
                if parent == collector_config.plan.collector_id:
                    port = base_port
                else:
                    port = mid_ports[parent]
                wire = localops_config_to_wire(config, LOCALHOST, port)
            path = scratch_dir / f"{config.client_id}.json"
            path.write_text(json.dumps(wire))
            node_files.append((config.client_id, path))

        # parents listen before children dial in: collector, then mids, then leaves
        ordered = sorted(node_files, key=lambda nf: (0 if "mid" in nf[0] else 1, nf[0]))
        procs: dict[str, subprocess.Popen] = {}
        handles = []
        exit_codes: dict[str, int] = {}
        try:
            for node_id, path, verb in [
                ("collector", collector_file, "serve-collector")
            ] + [(nid, p, "serve-localops") for nid, p in ordered]:
                err = (scratch_dir / f"{node_id}.err").open("wb")
                handles.append(err)
                procs[node_id] = subprocess.Popen(
                    [sys.executable, "-m", "fedtopo", verb, str(path)],
                    stdout=subprocess.DEVNULL,
                    stderr=err,
                )
            exit_codes["collector"] = procs["collector"].wait(timeout=COLLECTOR_WAIT_S)
            for node_id, proc in procs.items():
                if node_id != "collector":
                    exit_codes[node_id] = proc.wait(timeout=CHILD_WAIT_S)
        except subprocess.TimeoutExpired as exc:
            raise ConfigError(f"socket run stalled: {exc}") from exc
        finally:
            for proc in procs.values():
                if proc.poll() is None:
                    proc.kill()
                    proc.wait()
            for err in handles:
                err.close()
        for node_id in sorted(procs):
            if exit_codes.get(node_id, 1) != 0:
                err_file = scratch_dir / f"{node_id}.err"
                tail = err_file.read_text(errors="replace")[-2000:] if err_file.exists() else ""
                log.warning("%s exited %s\n%s", node_id, exit_codes.get(node_id), tail)
    return _summary_from_status(manifest.run_id, repository)


def _summary_from_status(run_id: str, repository: Repository) -> RunSummary:
    try:
        status = repository.load_status(run_id)
    except NotFoundError:
        status = {}
    accuracy = status.get("final_accuracy")
    return RunSummary(
        run_id=run_id,
        status=str(status.get("status", STATUS_FAILED)),
        rounds_completed=int(status.get("rounds_completed", 0)),
        final_accuracy=None if accuracy is None else float(accuracy),
        unpersisted=bool(status.get("unpersisted", False)),
    )


# -- process entry points -------------------------------------------------------


def serve_collector(config_path: str | Path) -> int:
    """Run one collector process from its config file; 0 iff the run finished."""
    obj = json.loads(Path(config_path).read_text())
    config, listen_port, runs_root = collector_config_from_wire(obj)
    repository = Repository(runs_root)
    repository.ensure_run(config.run_id)
    net = SocketServerNetwork(config.plan.collector_id, listen_port)
    try:
        summary = TrainingCollector(config, net, repository).run()
    finally:
        net.close()
    log.info("run %s finished: %s", summary.run_id, summary.status)
    return 0 if summary.status == STATUS_DONE else 1


def serve_localops(config_path: str | Path) -> int:
    """Run one local-operations process from its config file; 0 iff clean exit."""
    obj = json.loads(Path(config_path).read_text())
    config, host, port, listen_port = localops_config_from_wire(obj)
    net = _node_network(config, host, port, listen_port)
    try:
        outcome = run_local_ops(config, net)
    finally:
        net.close()
    return 0 if outcome == "done" else 1


def _node_network(
    config: LocalOpsConfig, host: str, port: int, listen_port: int | None
):
    if config.role == "mid":
        if listen_port is None:
            raise ConfigError("mid-aggregator config needs a listen_port")
        return SocketServerNetwork(
            config.client_id,
            listen_port,
            parent_id=config.parent_id,
            parent_host=host,
            parent_port=port,
        )
    return SocketClientNetwork(config.client_id, config.parent_id, host, port)
