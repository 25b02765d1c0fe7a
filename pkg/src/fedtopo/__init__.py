"""Federated-learning topology lab.

Round orchestration over pluggable transports: a deterministic in-process
simulator with fault injection, and localhost TCP sockets. Four topologies
(centralized, clustered, hierarchical, star-of-rings), synthetic data with
controllable skew, and a file-backed run repository.
"""
from .collector import CollectorConfig, RunSummary, TrainingCollector
from .data import Dataset, GenerationSpec, PartitionSpec, generate_synthetic, partition_dataset
from .errors import ConfigError, FedTopoError, NotFoundError
from .localops import LocalOpsConfig, LocalOpsNode, run_local_ops
from .manifest import RunManifest, apply_overrides, parse_manifest, propagate_config, validate_manifest
from .models import Hyperparams, ModelParams, ModelSpec, evaluate_model, init_model, train_local
from .repository import MetricRecord, Repository
from .runner import run_from_manifest, serve_collector, serve_localops
from .strategy import StrategyConfig, fedavg_aggregate, ifca_assign, sample_clients
from .topology import TopologyPlan, TopologySpec, build_plan

__version__ = "0.1.0"

__all__ = [
    "CollectorConfig",
    "ConfigError",
    "Dataset",
    "FedTopoError",
    "GenerationSpec",
    "Hyperparams",
    "LocalOpsConfig",
    "LocalOpsNode",
    "MetricRecord",
    "ModelParams",
    "ModelSpec",
    "NotFoundError",
    "PartitionSpec",
    "Repository",
    "RunManifest",
    "RunSummary",
    "StrategyConfig",
    "TopologyPlan",
    "TopologySpec",
    "TrainingCollector",
    "apply_overrides",
    "build_plan",
    "evaluate_model",
    "fedavg_aggregate",
    "generate_synthetic",
    "ifca_assign",
    "init_model",
    "parse_manifest",
    "partition_dataset",
    "propagate_config",
    "run_from_manifest",
    "run_local_ops",
    "sample_clients",
    "serve_collector",
    "serve_localops",
    "train_local",
    "validate_manifest",
    "__version__",
]
