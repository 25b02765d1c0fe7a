"""Run manifests: one document that fully determines an experiment.

A manifest is plain JSON whose blocks mirror the domain config types
(topology, strategy, model, hyper, data, transport).  This module parses
and validates manifests, applies command-line overrides, and propagates a
valid manifest into the per-node configurations every process needs.  It
also defines the config-file formats that multi-process runs hand to
`serve-collector` and `serve-localops`.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

from .collector import CollectorConfig
from .data import GenerationSpec, PartitionSpec
from .errors import ConfigError, TopologyError
from .localops import ROLE_LEAF as LOCAL_LEAF
from .localops import ROLE_MID as LOCAL_MID
from .localops import ROLE_RING as LOCAL_RING
from .localops import LocalOpsConfig
from .models import Hyperparams, ModelSpec
from .seeds import SALT_GEN, SALT_HOLDOUT, SALT_PART, mix64
from .strategy import StrategyConfig
from .topology import (
    ROLE_MID,
    TopologyPlan,
    TopologySpec,
    build_plan,
    ring_group_of,
    validate_spec,
)
from .transport.faults import FaultSpec
from .transport.sockets import DEFAULT_PORT

TRANSPORT_KINDS = ("inproc", "socket")

_RUN_ID_RE = re.compile(r"^[A-Za-z0-9._-]+$")

# Convenience spellings accepted by --set in addition to literal paths.
OVERRIDE_ALIASES = {
    "training.rounds": "total_rounds",
    "training.learning_rate": "hyper.learning_rate",
    "training.local_epochs": "hyper.local_epochs",
    "training.batch_size": "hyper.batch_size",
}

_TOP_LEVEL_KEYS = {
    "run_id",
    "seed",
    "topology",
    "strategy",
    "model",
    "hyper",
    "data",
    "transport",
    "total_rounds",
    "checkpoint_every",
}


def client_ids(num_clients: int) -> list[str]:
    return [f"c{i:03d}" for i in range(num_clients)]


@dataclass(frozen=True)
class DataConfig:
    generation: GenerationSpec
    partition: PartitionSpec
    holdout_samples: int = 0


@dataclass(frozen=True)
class TransportConfig:
    kind: str
    faults: tuple[FaultSpec, ...] = ()
    port: int = DEFAULT_PORT


@dataclass(frozen=True)
class RunManifest:
    run_id: str
    seed: int
    topology: TopologySpec
    strategy: StrategyConfig
    model: ModelSpec
    hyper: Hyperparams
    data: DataConfig
    transport: TransportConfig
    total_rounds: int
    checkpoint_every: int = 0


# -- parsing ---------------------------------------------------------------


def _require(obj: dict[str, Any], key: str, block: str) -> Any:
    if key not in obj:
        raise ConfigError(f"{block}: missing required field {key!r}")
    return obj[key]


def _parse_topology(obj: dict[str, Any]) -> TopologySpec:
    return TopologySpec(
        kind=_require(obj, "kind", "topology"),
        num_clients=int(_require(obj, "num_clients", "topology")),
        num_clusters=obj.get("num_clusters"),
        num_mid_aggregators=obj.get("num_mid_aggregators"),
        local_rounds=obj.get("local_rounds"),
        ring_groups=obj.get("ring_groups"),
    )


def _parse_strategy(obj: dict[str, Any], topology: TopologySpec | None) -> StrategyConfig:
    default_clusters = 1
    if topology is not None and topology.kind == "clustered":
        default_clusters = topology.num_clusters or 1
    return StrategyConfig(
        min_available_clients=int(_require(obj, "min_available_clients", "strategy")),
        min_fit_clients=int(_require(obj, "min_fit_clients", "strategy")),
        fit_fraction=float(obj.get("fit_fraction", 1.0)),
        eval_fraction=float(obj.get("eval_fraction", 1.0)),
        round_timeout_ms=int(obj.get("round_timeout_ms", 30_000)),
        blacklist=frozenset(obj.get("blacklist", ())),
        num_clusters=int(obj.get("num_clusters", default_clusters)),
    )


def _parse_model(obj: dict[str, Any]) -> ModelSpec:
    return ModelSpec(
        kind=_require(obj, "kind", "model"),
        input_dim=int(_require(obj, "input_dim", "model")),
        hidden_dims=tuple(obj.get("hidden_dims", ())),
        num_classes=int(obj.get("num_classes", 2)),
    )


def _parse_hyper(obj: dict[str, Any]) -> Hyperparams:
    # the manifest never carries a training seed; per-node seeds are
    # derived from the run seed at instruction time.
    return Hyperparams(
        learning_rate=float(_require(obj, "learning_rate", "hyper")),
        local_epochs=int(obj.get("local_epochs", 1)),
        batch_size=int(obj.get("batch_size", 32)),
        seed=0,
    )


def _parse_data(obj: dict[str, Any], seed: int, topology: TopologySpec | None) -> DataConfig:
    gen_obj = dict(_require(obj, "generation", "data"))
    part_obj = dict(_require(obj, "partition", "data"))
    generation = GenerationSpec(
        kind=_require(gen_obj, "kind", "data.generation"),
        num_samples=int(_require(gen_obj, "num_samples", "data.generation")),
        input_dim=int(_require(gen_obj, "input_dim", "data.generation")),
        num_classes=int(gen_obj.get("num_classes", 2)),
        seed=int(gen_obj.get("seed", mix64(seed, SALT_GEN))),
    )
    num_clients = part_obj.get("num_clients")
    if num_clients is None and topology is not None:
        num_clients = topology.num_clients
    if num_clients is None:
        raise ConfigError("data.partition: num_clients could not be determined")
    partition = PartitionSpec(
        scheme=_require(part_obj, "scheme", "data.partition"),
        num_clients=int(num_clients),
        seed=int(part_obj.get("seed", mix64(seed, SALT_PART))),
        alpha=part_obj.get("alpha"),
        shards_per_client=part_obj.get("shards_per_client"),
        num_clusters=part_obj.get("num_clusters"),
    )
    holdout = int(obj.get("holdout_samples", 0))
    if holdout < 0:
        raise ConfigError("data: holdout_samples must be >= 0")
    return DataConfig(generation=generation, partition=partition, holdout_samples=holdout)


def _parse_transport(obj: dict[str, Any]) -> TransportConfig:
    kind = obj.get("kind", "inproc")
    if kind not in TRANSPORT_KINDS:
        raise ConfigError(f"transport: unknown kind {kind!r}")
    faults = tuple(
        FaultSpec(
            target=tuple(f["target"]) if isinstance(f.get("target"), list) else f.get("target", ""),
            drop_prob=float(f.get("drop_prob", 0.0)),
            latency_ms=int(f.get("latency_ms", 0)),
            disconnect_at_round=f.get("disconnect_at_round"),
            reconnect_at_round=f.get("reconnect_at_round"),
        )
        for f in obj.get("faults", ())
    )
    return TransportConfig(kind=kind, faults=faults, port=int(obj.get("port", DEFAULT_PORT)))


def validate_manifest(raw: dict[str, Any]) -> list[str]:
    """Every violation found, empty when the manifest is runnable."""
    errors: list[str] = []
    if not isinstance(raw, dict):
        return ["manifest must be a JSON object"]
    for key in sorted(set(raw) - _TOP_LEVEL_KEYS):
        errors.append(f"unknown top-level field {key!r}")

    run_id = raw.get("run_id")
    if not isinstance(run_id, str) or not _RUN_ID_RE.match(run_id or ""):
        errors.append("run_id must be a non-empty filesystem-safe string")
    try:
        seed = int(raw["seed"])
    except (KeyError, TypeError, ValueError):
        errors.append("seed must be an integer")
        seed = 0
    try:
        total_rounds = int(raw["total_rounds"])
        if total_rounds < 1:
            errors.append("total_rounds must be >= 1")
    except (KeyError, TypeError, ValueError):
        errors.append("total_rounds must be an integer >= 1")
    try:
        if int(raw.get("checkpoint_every", 0)) < 0:
            errors.append("checkpoint_every must be >= 0")
    except (TypeError, ValueError):
        errors.append("checkpoint_every must be an integer >= 0")

    topology: TopologySpec | None = None
    try:
        topology = _parse_topology(dict(raw.get("topology") or {}))
        errors.extend(f"topology: {e}" for e in validate_spec(topology))
    except (ConfigError, TypeError, ValueError) as exc:
        errors.append(f"topology: {exc}")

    strategy: StrategyConfig | None = None
    try:
        strategy = _parse_strategy(dict(raw.get("strategy") or {}), topology)
    except (ConfigError, TypeError, ValueError) as exc:
        errors.append(f"strategy: {exc}")

    model: ModelSpec | None = None
    try:
        model = _parse_model(dict(raw.get("model") or {}))
    except (ConfigError, TypeError, ValueError) as exc:
        errors.append(f"model: {exc}")

    try:
        _parse_hyper(dict(raw.get("hyper") or {}))
    except (ConfigError, TypeError, ValueError) as exc:
        errors.append(f"hyper: {exc}")

    data: DataConfig | None = None
    try:
        data = _parse_data(dict(raw.get("data") or {}), seed, topology)
    except (ConfigError, TypeError, ValueError, KeyError) as exc:
        errors.append(f"data: {exc}")

    transport: TransportConfig | None = None
    try:
        transport = _parse_transport(dict(raw.get("transport") or {}))
    except (ConfigError, TypeError, ValueError, KeyError) as exc:
        errors.append(f"transport: {exc}")

    # cross-block agreement, only between blocks that parsed
    if topology is not None and strategy is not None:
        if strategy.min_available_clients > topology.num_clients:
            errors.append(
                f"strategy: min_available_clients {strategy.min_available_clients} "
                f"exceeds num_clients {topology.num_clients}"
            )
        if topology.kind == "clustered" and strategy.num_clusters != topology.num_clusters:
            errors.append(
                f"strategy: num_clusters {strategy.num_clusters} disagrees with "
                f"topology num_clusters {topology.num_clusters}"
            )
        if topology.kind != "clustered" and strategy.num_clusters != 1:
            errors.append("strategy: num_clusters applies only to the clustered topology")
        known = set(client_ids(topology.num_clients))
        for cid in sorted(strategy.blacklist - known):
            errors.append(f"strategy: blacklisted client {cid!r} does not exist")
    if model is not None and data is not None:
        gen = data.generation
        if model.input_dim != gen.input_dim:
            errors.append(
                f"model input_dim {model.input_dim} differs from data input_dim {gen.input_dim}"
            )
        if model.num_classes != gen.num_classes:
            errors.append(
                f"model num_classes {model.num_classes} differs from data "
                f"num_classes {gen.num_classes}"
            )
    if data is not None:
        gen = data.generation
        if gen.kind == "linear" and gen.num_classes != 2:
            errors.append("data: linear generation is binary (num_classes must be 2)")
        if gen.kind == "blobs" and gen.input_dim < gen.num_classes - 1:
            errors.append(
                f"data: blobs needs input_dim >= num_classes - 1 "
                f"({gen.input_dim} < {gen.num_classes - 1})"
            )
        if topology is not None and data.partition.num_clients != topology.num_clients:
            errors.append(
                f"data: partition num_clients {data.partition.num_clients} differs "
                f"from topology num_clients {topology.num_clients}"
            )
        if topology is not None and topology.kind == "clustered" and data.holdout_samples:
            errors.append("data: holdout evaluation applies only to single-model topologies")
    if transport is not None:
        if transport.faults and transport.kind != "inproc":
            errors.append("transport: fault injection requires the inproc transport")
        if topology is not None:
            known = set(client_ids(topology.num_clients))
            known.add("collector")
            if topology.kind == "hierarchical":
                known.update(f"mid{i:02d}" for i in range(topology.num_mid_aggregators or 0))
            for fault in transport.faults:
                names = fault.target if isinstance(fault.target, tuple) else (fault.target,)
                for name in names:
                    if name not in known:
                        errors.append(f"transport: fault target {name!r} does not exist")
    if topology is not None and topology.kind == "star_ring" and isinstance(
        topology.ring_groups, tuple
    ):
        try:
            build_plan(topology, client_ids(topology.num_clients))
        except (TopologyError, ConfigError) as exc:
            errors.append(f"topology: {exc}")
    return errors


def parse_manifest(raw: dict[str, Any]) -> RunManifest:
    """Strict parse; raises with every violation when the manifest is bad."""
    errors = validate_manifest(raw)
    if errors:
        raise ConfigError("; ".join(errors))
    seed = int(raw["seed"])
    topology = _parse_topology(dict(raw["topology"]))
    return RunManifest(
        run_id=raw["run_id"],
        seed=seed,
        topology=topology,
        strategy=_parse_strategy(dict(raw["strategy"]), topology),
        model=_parse_model(dict(raw["model"])),
        hyper=_parse_hyper(dict(raw["hyper"])),
        data=_parse_data(dict(raw["data"]), seed, topology),
        transport=_parse_transport(dict(raw.get("transport") or {})),
        total_rounds=int(raw["total_rounds"]),
        checkpoint_every=int(raw.get("checkpoint_every", 0)),
    )


def load_manifest_file(path: str | Path) -> dict[str, Any]:
    text = Path(path).read_text(encoding="utf-8")
    obj = json.loads(text)
    if not isinstance(obj, dict):
        raise ConfigError("manifest must be a JSON object")
    return obj


# -- overrides ---------------------------------------------------------------


def apply_overrides(raw: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply dotted-path key=value pairs to a copy of the raw manifest.

    Values parse as JSON when possible and fall back to plain strings, so
    `--set training.rounds=3` and `--set run_id=sweep-a` both work.
    """
    out = json.loads(json.dumps(raw))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key = OVERRIDE_ALIASES.get(key, key)
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {item!r} descends through a non-object")
            node = nxt
        node[parts[-1]] = parsed
    return out


# -- propagation ---------------------------------------------------------------


def _collector_strategy(manifest: RunManifest, plan: TopologyPlan) -> StrategyConfig:
    """What the collector's quorum means depends on who reports to it.

    In the hierarchical layout the collector's direct children are the
    mid-aggregators, and a round needs every one of them.
    """
    if plan.kind != "hierarchical":
        return manifest.strategy
    mids = len(plan.mid_ids)
    return replace(
        manifest.strategy,
        min_available_clients=mids,
        min_fit_clients=mids,
        fit_fraction=1.0,
        eval_fraction=1.0,
    )


def build_holdout(manifest: RunManifest) -> GenerationSpec | None:
    if manifest.data.holdout_samples <= 0:
        return None
    gen = manifest.data.generation
    return GenerationSpec(
        kind=gen.kind,
        num_samples=manifest.data.holdout_samples,
        input_dim=gen.input_dim,
        num_classes=gen.num_classes,
        seed=mix64(manifest.seed, SALT_HOLDOUT),
    )


def propagate_config(
    manifest: RunManifest,
) -> tuple[CollectorConfig, list[LocalOpsConfig]]:
    """Derive every node's startup configuration from one manifest.

    The same manifest always yields the same configs: ids, indices, and
    seeds are all functions of the manifest content.
    """
    cids = client_ids(manifest.topology.num_clients)
    plan = build_plan(manifest.topology, cids)
    index_of = {cid: i for i, cid in enumerate(cids)}
    holdout_spec = build_holdout(manifest)

    if plan.kind == "hierarchical":
        direct = {mid: j for j, mid in enumerate(plan.mid_ids)}
    else:
        direct = dict(index_of)
    collector = CollectorConfig(
        run_id=manifest.run_id,
        run_seed=manifest.seed,
        total_rounds=manifest.total_rounds,
        model=manifest.model,
        strategy=_collector_strategy(manifest, plan),
        plan=plan,
        learning_rate=manifest.hyper.learning_rate,
        local_epochs=manifest.hyper.local_epochs,
        batch_size=manifest.hyper.batch_size,
        client_indices=direct,
        checkpoint_every=manifest.checkpoint_every,
        holdout=holdout_spec.build() if holdout_spec else None,
    )

    nodes: list[LocalOpsConfig] = []
    for cid in cids:
        if plan.kind == "star_ring":
            role = LOCAL_RING
            group = ring_group_of(plan, cid)
            local_rounds = plan.local_rounds
        else:
            role = LOCAL_LEAF
            group = ()
            local_rounds = 1
        nodes.append(
            LocalOpsConfig(
                client_id=cid,
                client_index=index_of[cid],
                parent_id=plan.parent[cid],
                role=role,
                run_seed=manifest.seed,
                model=manifest.model,
                generation=manifest.data.generation,
                partition=manifest.data.partition,
                partition_index=index_of[cid],
                local_rounds=local_rounds,
                ring_group=group,
            )
        )
    for mid in plan.mid_ids:
        children = tuple(plan.children_of(mid))
        nodes.append(
            LocalOpsConfig(
                client_id=mid,
                client_index=len(cids) + plan.mid_ids.index(mid),
                parent_id=plan.parent[mid],
                role=LOCAL_MID,
                run_seed=manifest.seed,
                model=manifest.model,
                local_rounds=plan.local_rounds,
                children=children,
                children_indices=tuple(index_of[c] for c in children),
                child_strategy=StrategyConfig(
                    min_available_clients=1,
                    min_fit_clients=1,
                    round_timeout_ms=manifest.strategy.round_timeout_ms,
                ),
            )
        )
    return collector, nodes


# -- config files for multi-process runs -----------------------------------------


def _model_to_wire(model: ModelSpec) -> dict[str, Any]:
    return {
        "kind": model.kind,
        "input_dim": model.input_dim,
        "hidden_dims": list(model.hidden_dims),
        "num_classes": model.num_classes,
    }


def _model_from_wire(obj: dict[str, Any]) -> ModelSpec:
    return ModelSpec(
        kind=obj["kind"],
        input_dim=int(obj["input_dim"]),
        hidden_dims=tuple(obj["hidden_dims"]),
        num_classes=int(obj["num_classes"]),
    )


def _strategy_to_wire(strategy: StrategyConfig) -> dict[str, Any]:
    return {
        "min_available_clients": strategy.min_available_clients,
        "min_fit_clients": strategy.min_fit_clients,
        "fit_fraction": strategy.fit_fraction,
        "eval_fraction": strategy.eval_fraction,
        "round_timeout_ms": strategy.round_timeout_ms,
        "blacklist": sorted(strategy.blacklist),
        "num_clusters": strategy.num_clusters,
    }


def _strategy_from_wire(obj: dict[str, Any]) -> StrategyConfig:
    return StrategyConfig(
        min_available_clients=int(obj["min_available_clients"]),
        min_fit_clients=int(obj["min_fit_clients"]),
        fit_fraction=float(obj["fit_fraction"]),
        eval_fraction=float(obj["eval_fraction"]),
        round_timeout_ms=int(obj["round_timeout_ms"]),
        blacklist=frozenset(obj["blacklist"]),
        num_clusters=int(obj["num_clusters"]),
    )


def _generation_to_wire(gen: GenerationSpec | None) -> dict[str, Any] | None:
    if gen is None:
        return None
    return {
        "kind": gen.kind,
        "num_samples": gen.num_samples,
        "input_dim": gen.input_dim,
        "num_classes": gen.num_classes,
        "seed": gen.seed,
    }


def _generation_from_wire(obj: dict[str, Any] | None) -> GenerationSpec | None:
    if obj is None:
        return None
    return GenerationSpec(
        kind=obj["kind"],
        num_samples=int(obj["num_samples"]),
        input_dim=int(obj["input_dim"]),
        num_classes=int(obj["num_classes"]),
        seed=int(obj["seed"]),
    )


def _partition_to_wire(part: PartitionSpec | None) -> dict[str, Any] | None:
    if part is None:
        return None
    return {
        "scheme": part.scheme,
        "num_clients": part.num_clients,
        "seed": part.seed,
        "alpha": part.alpha,
        "shards_per_client": part.shards_per_client,
        "num_clusters": part.num_clusters,
    }


def _partition_from_wire(obj: dict[str, Any] | None) -> PartitionSpec | None:
    if obj is None:
        return None
    return PartitionSpec(
        scheme=obj["scheme"],
        num_clients=int(obj["num_clients"]),
        seed=int(obj["seed"]),
        alpha=obj.get("alpha"),
        shards_per_client=obj.get("shards_per_client"),
        num_clusters=obj.get("num_clusters"),
    )


def _plan_to_wire(plan: TopologyPlan) -> dict[str, Any]:
    return {
        "kind": plan.kind,
        "collector_id": plan.collector_id,
        "roles": dict(plan.roles),
        "parent": dict(plan.parent),
        "ring_order": [list(g) for g in plan.ring_order],
        "cluster_count": plan.cluster_count,
        "local_rounds": plan.local_rounds,
    }


def _plan_from_wire(obj: dict[str, Any]) -> TopologyPlan:
    return TopologyPlan(
        kind=obj["kind"],
        collector_id=obj["collector_id"],
        roles=obj["roles"],
        parent=obj["parent"],
        ring_order=tuple(tuple(g) for g in obj["ring_order"]),
        cluster_count=int(obj["cluster_count"]),
        local_rounds=int(obj["local_rounds"]),
    )


def collector_config_to_wire(
    config: CollectorConfig,
    holdout_spec: GenerationSpec | None,
    listen_port: int,
    runs_root: str,
) -> dict[str, Any]:
    """Self-contained startup document for a `serve-collector` process.

    The holdout set travels as its generation spec, not as data.
    """
    return {
        "node_kind": "collector",
        "run_id": config.run_id,
        "run_seed": config.run_seed,
        "total_rounds": config.total_rounds,
        "model": _model_to_wire(config.model),
        "strategy": _strategy_to_wire(config.strategy),
        "plan": _plan_to_wire(config.plan),
        "learning_rate": config.learning_rate,
        "local_epochs": config.local_epochs,
        "batch_size": config.batch_size,
        "client_indices": dict(config.client_indices),
        "join_timeout_ms": config.join_timeout_ms,
        "checkpoint_every": config.checkpoint_every,
        "holdout_generation": _generation_to_wire(holdout_spec),
        "listen_port": listen_port,
        "runs_root": runs_root,
    }


def collector_config_from_wire(obj: dict[str, Any]) -> tuple[CollectorConfig, int, str]:
    if obj.get("node_kind") != "collector":
        raise ConfigError("not a collector config document")
    holdout_spec = _generation_from_wire(obj.get("holdout_generation"))
    config = CollectorConfig(
        run_id=obj["run_id"],
        run_seed=int(obj["run_seed"]),
        total_rounds=int(obj["total_rounds"]),
        model=_model_from_wire(obj["model"]),
        strategy=_strategy_from_wire(obj["strategy"]),
        plan=_plan_from_wire(obj["plan"]),
        learning_rate=float(obj["learning_rate"]),
        local_epochs=int(obj["local_epochs"]),
        batch_size=int(obj["batch_size"]),
        client_indices={k: int(v) for k, v in obj["client_indices"].items()},
        join_timeout_ms=int(obj["join_timeout_ms"]),
        checkpoint_every=int(obj["checkpoint_every"]),
        holdout=holdout_spec.build() if holdout_spec else None,
    )
    return config, int(obj["listen_port"]), obj["runs_root"]


def localops_config_to_wire(
    config: LocalOpsConfig,
    connect_host: str,
    connect_port: int,
    listen_port: int | None = None,
) -> dict[str, Any]:
    """Startup document for a `serve-localops` process.

    connect_host/port point at the parent's endpoint; listen_port is set
    only for mid-aggregators, which accept their own children.
    """
    return {
        "node_kind": "localops",
        "client_id": config.client_id,
        "client_index": config.client_index,
        "parent_id": config.parent_id,
        "role": config.role,
        "run_seed": config.run_seed,
        "model": _model_to_wire(config.model),
        "generation": _generation_to_wire(config.generation),
        "partition": _partition_to_wire(config.partition),
        "partition_index": config.partition_index,
        "local_rounds": config.local_rounds,
        "ring_group": list(config.ring_group),
        "children": list(config.children),
        "children_indices": list(config.children_indices),
        "child_strategy": (
            _strategy_to_wire(config.child_strategy) if config.child_strategy else None
        ),
        "join_timeout_ms": config.join_timeout_ms,
        "connect_host": connect_host,
        "connect_port": connect_port,
        "listen_port": listen_port,
    }


def localops_config_from_wire(obj: dict[str, Any]) -> tuple[LocalOpsConfig, str, int, int | None]:
    if obj.get("node_kind") != "localops":
        raise ConfigError("not a localops config document")
    config = LocalOpsConfig(
        client_id=obj["client_id"],
        client_index=int(obj["client_index"]),
        parent_id=obj["parent_id"],
        role=obj["role"],
        run_seed=int(obj["run_seed"]),
        model=_model_from_wire(obj["model"]),
        generation=_generation_from_wire(obj.get("generation")),
        partition=_partition_from_wire(obj.get("partition")),
        partition_index=(
            int(obj["partition_index"]) if obj.get("partition_index") is not None else None
        ),
        local_rounds=int(obj["local_rounds"]),
        ring_group=tuple(obj["ring_group"]),
        children=tuple(obj["children"]),
        children_indices=tuple(int(i) for i in obj["children_indices"]),
        child_strategy=(
            _strategy_from_wire(obj["child_strategy"]) if obj.get("child_strategy") else None
        ),
        join_timeout_ms=int(obj["join_timeout_ms"]),
    )
    listen = obj.get("listen_port")
    return config, obj["connect_host"], int(obj["connect_port"]), (
        int(listen) if listen is not None else None
    )


def manifest_to_wire(manifest: RunManifest) -> dict[str, Any]:
    """The manifest back as plain JSON, with every derived default filled in."""
    topo = manifest.topology
    topology: dict[str, Any] = {"kind": topo.kind, "num_clients": topo.num_clients}
    if topo.num_clusters is not None:
        topology["num_clusters"] = topo.num_clusters
    if topo.num_mid_aggregators is not None:
        topology["num_mid_aggregators"] = topo.num_mid_aggregators
    if topo.local_rounds is not None:
        topology["local_rounds"] = topo.local_rounds
    if topo.ring_groups is not None:
        rg = topo.ring_groups
        topology["ring_groups"] = rg if isinstance(rg, str) else [list(g) for g in rg]
    return {
        "run_id": manifest.run_id,
        "seed": manifest.seed,
        "topology": topology,
        "strategy": _strategy_to_wire(manifest.strategy),
        "model": _model_to_wire(manifest.model),
        "hyper": {
            "learning_rate": manifest.hyper.learning_rate,
            "local_epochs": manifest.hyper.local_epochs,
            "batch_size": manifest.hyper.batch_size,
        },
        "data": {
            "generation": _generation_to_wire(manifest.data.generation),
            "partition": _partition_to_wire(manifest.data.partition),
            "holdout_samples": manifest.data.holdout_samples,
        },
        "transport": {
            "kind": manifest.transport.kind,
            "faults": [
                {
                    "target": list(f.target) if isinstance(f.target, tuple) else f.target,
                    "drop_prob": f.drop_prob,
                    "latency_ms": f.latency_ms,
                    "disconnect_at_round": f.disconnect_at_round,
                    "reconnect_at_round": f.reconnect_at_round,
                }
                for f in manifest.transport.faults
            ],
            "port": manifest.transport.port,
        },
        "total_rounds": manifest.total_rounds,
        "checkpoint_every": manifest.checkpoint_every,
    }
