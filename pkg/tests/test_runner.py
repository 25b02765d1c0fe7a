"""End-to-end runs from manifests: in-process determinism, socket parity."""
import json
import time
from concurrent.futures import ThreadPoolExecutor

import pytest

from fedtopo.errors import ConfigError
from fedtopo.manifest import (
    build_holdout,
    collector_config_to_wire,
    localops_config_to_wire,
    parse_manifest,
    propagate_config,
)
from fedtopo.repository import Repository
from fedtopo.runner import _free_port, run_from_manifest, serve_collector, serve_localops


def make_manifest(run_id, **over):
    raw = {
        "run_id": run_id,
        "seed": 23,
        "topology": {"kind": "centralized", "num_clients": 4},
        "strategy": {"min_available_clients": 4, "min_fit_clients": 3},
        "model": {"kind": "logreg", "input_dim": 5, "num_classes": 2},
        "hyper": {"learning_rate": 0.1, "local_epochs": 1, "batch_size": 10},
        "data": {
            "generation": {"kind": "linear", "num_samples": 200, "input_dim": 5, "num_classes": 2},
            "partition": {"scheme": "iid"},
        },
        "transport": {"kind": "inproc", "port": 0},
        "total_rounds": 2,
    }
    raw.update(over)
    return raw


def metric_values(root, run_id):
    """Metric rows as comparable tuples, without run-specific noise."""
    rows = []
    for record in Repository(root).load_metrics(run_id):
        if record.metric == "duration_ms":
            continue
        rows.append((record.round, record.scope, record.metric, record.value))
    return rows


class TestInproc:
    def test_run_completes_and_persists(self, tmp_path):
        summary = run_from_manifest(make_manifest("r-basic"), tmp_path)
        assert summary.status == "done"
        assert summary.rounds_completed == 2
        assert summary.final_accuracy is not None
        repo = Repository(tmp_path)
        assert repo.list_runs() == ["r-basic"]
        status = repo.load_status("r-basic")
        assert status["status"] == "done"
        assert status["rounds_completed"] == 2
        assert status["final_accuracy"] == summary.final_accuracy
        assert "final" in repo.list_artifacts("r-basic")
        assert len(repo.load_metrics("r-basic")) > 0

    def test_stored_manifest_round_trips(self, tmp_path):
        raw = make_manifest("r-stored")
        run_from_manifest(raw, tmp_path)
        stored = Repository(tmp_path).load_manifest("r-stored")
        assert stored["run_id"] == "r-stored"
        assert stored["seed"] == 23
        # derived defaults are filled in at storage time
        assert stored["data"]["partition"]["num_clients"] == 4
        assert isinstance(stored["data"]["generation"]["seed"], int)

    def test_rerun_metrics_are_byte_identical(self, tmp_path):
        raw = make_manifest("r-repeat")
        run_from_manifest(raw, tmp_path / "a")
        run_from_manifest(raw, tmp_path / "b")
        log_a = (tmp_path / "a" / "runs" / "r-repeat" / "metrics.log").read_bytes()
        log_b = (tmp_path / "b" / "runs" / "r-repeat" / "metrics.log").read_bytes()
        assert log_a == log_b

    def test_transport_argument_overrides_and_persists(self, tmp_path):
        raw = make_manifest("r-forced", transport={"kind": "socket", "port": 0})
        summary = run_from_manifest(raw, tmp_path, transport="inproc")
        assert summary.status == "done"
        stored = Repository(tmp_path).load_manifest("r-forced")
        assert stored["transport"]["kind"] == "inproc"

    def test_unknown_transport_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            run_from_manifest(make_manifest("r-bad-t"), tmp_path, transport="carrier-pigeon")

    def test_invalid_manifest_rejected_before_anything_starts(self, tmp_path):
        raw = make_manifest("r-invalid", total_rounds=0)
        with pytest.raises(ConfigError):
            run_from_manifest(raw, tmp_path)
        assert not (tmp_path / "runs" / "r-invalid").exists()

    def test_duplicate_run_id_rejected(self, tmp_path):
        run_from_manifest(make_manifest("r-dup"), tmp_path)
        with pytest.raises(ConfigError, match="already exists"):
            run_from_manifest(make_manifest("r-dup"), tmp_path)

    def test_blacklist_below_quorum_aborts(self, tmp_path):
        raw = make_manifest("r-abort")
        raw["strategy"]["blacklist"] = ["c002", "c003"]
        summary = run_from_manifest(raw, tmp_path)
        assert summary.status == "aborted"
        assert summary.rounds_completed == 0
        assert Repository(tmp_path).load_status("r-abort")["status"] == "aborted"

    def test_single_mid_hierarchy_matches_centralized(self, tmp_path):
        central = make_manifest("r-central")
        hier = make_manifest(
            "r-hier",
            topology={
                "kind": "hierarchical",
                "num_clients": 4,
                "num_mid_aggregators": 1,
                "local_rounds": 1,
            },
        )
        run_from_manifest(central, tmp_path)
        run_from_manifest(hier, tmp_path)
        final_c = (tmp_path / "runs" / "r-central" / "models" / "final").read_bytes()
        final_h = (tmp_path / "runs" / "r-hier" / "models" / "final").read_bytes()
        assert final_c == final_h

    def test_lossy_links_still_complete(self, tmp_path):
        raw = make_manifest(
            "r-lossy",
            transport={
                "kind": "inproc",
                "faults": [{"target": "c000", "drop_prob": 0.2}],
            },
        )
        raw["strategy"]["min_available_clients"] = 3
        raw["strategy"]["min_fit_clients"] = 2
        summary = run_from_manifest(raw, tmp_path)
        assert summary.status == "done"
        assert summary.rounds_completed == 2


class TestSocket:
    def test_centralized_socket_matches_inproc(self, tmp_path):
        run_from_manifest(make_manifest("s-in"), tmp_path)
        summary = run_from_manifest(
            make_manifest("s-sock", transport={"kind": "socket", "port": 0}), tmp_path
        )
        assert summary.status == "done"
        assert summary.rounds_completed == 2
        final_in = (tmp_path / "runs" / "s-in" / "models" / "final").read_bytes()
        final_sock = (tmp_path / "runs" / "s-sock" / "models" / "final").read_bytes()
        assert final_in == final_sock
        assert metric_values(tmp_path, "s-in") == metric_values(tmp_path, "s-sock")

    def test_ring_passes_cross_the_hub(self, tmp_path):
        topo = {
            "kind": "star_ring",
            "num_clients": 4,
            "local_rounds": 2,
            "ring_groups": "auto:2",
        }
        run_from_manifest(make_manifest("ring-in", topology=topo), tmp_path)
        summary = run_from_manifest(
            make_manifest(
                "ring-sock", topology=topo, transport={"kind": "socket", "port": 0}
            ),
            tmp_path,
        )
        assert summary.status == "done"
        final_in = (tmp_path / "runs" / "ring-in" / "models" / "final").read_bytes()
        final_sock = (tmp_path / "runs" / "ring-sock" / "models" / "final").read_bytes()
        assert final_in == final_sock

    def test_mid_aggregators_listen_on_their_own_ports(self, tmp_path):
        topo = {
            "kind": "hierarchical",
            "num_clients": 4,
            "num_mid_aggregators": 2,
            "local_rounds": 2,
        }
        run_from_manifest(make_manifest("hier-in", topology=topo), tmp_path)
        summary = run_from_manifest(
            make_manifest(
                "hier-sock", topology=topo, transport={"kind": "socket", "port": 0}
            ),
            tmp_path,
        )
        assert summary.status == "done"
        final_in = (tmp_path / "runs" / "hier-in" / "models" / "final").read_bytes()
        final_sock = (tmp_path / "runs" / "hier-sock" / "models" / "final").read_bytes()
        assert final_in == final_sock

    def test_manually_placed_processes_persist_without_an_orchestrator(self, tmp_path):
        # hand-built configs, no run_from_manifest parent to create the run dir
        manifest = parse_manifest(make_manifest("manual"))
        collector_config, node_configs = propagate_config(manifest)
        port = _free_port()
        collector_path = tmp_path / "collector.json"
        collector_path.write_text(
            json.dumps(
                collector_config_to_wire(
                    collector_config, build_holdout(manifest), port, str(tmp_path / "work")
                )
            )
        )
        node_paths = []
        for config in node_configs:
            path = tmp_path / f"{config.client_id}.json"
            path.write_text(json.dumps(localops_config_to_wire(config, "127.0.0.1", port)))
            node_paths.append(path)

        with ThreadPoolExecutor(max_workers=1 + len(node_paths)) as pool:
            collector_result = pool.submit(serve_collector, collector_path)
            time.sleep(0.2)
            node_results = [pool.submit(serve_localops, p) for p in node_paths]
            assert collector_result.result(timeout=60) == 0
            assert [f.result(timeout=60) for f in node_results] == [0] * len(node_paths)

        repo = Repository(tmp_path / "work")
        status = repo.load_status("manual")
        assert status["status"] == "done"
        assert status["rounds_completed"] == 2
        assert status["unpersisted"] is False
        assert "final" in repo.list_artifacts("manual")
        assert len(repo.load_metrics("manual")) > 0
