"""Client selection and aggregation rules.

The functions here are pure: the round engine feeds them registry
snapshots and collected results, they hand back decisions.  All of them
iterate over clients in ascending client_id order so that outcomes do not
depend on arrival order, which the bitwise reproducibility guarantees
rely on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigError, EmptyAggregationError, InsufficientClientsError, ShapeError
from .models import EvalMetrics, Hyperparams, ModelParams, TrainMetrics, evaluate_model
from .seeds import MASK64


@dataclass(frozen=True)
class StrategyConfig:
    """Quorum and sampling knobs for one aggregation layer."""

    min_available_clients: int
    min_fit_clients: int
    fit_fraction: float = 1.0
    eval_fraction: float = 1.0
    round_timeout_ms: int = 30_000
    blacklist: frozenset[str] = frozenset()
    num_clusters: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "blacklist", frozenset(self.blacklist))
        if self.min_fit_clients < 1:
            raise ConfigError("min_fit_clients must be >= 1")
        if self.min_available_clients < self.min_fit_clients:
            raise ConfigError("min_available_clients must be >= min_fit_clients")
        for name in ("fit_fraction", "eval_fraction"):
            value = getattr(self, name)
            if not (0.0 < value <= 1.0):
                raise ConfigError(f"{name} must be in (0, 1]")
        if self.round_timeout_ms <= 0:
            raise ConfigError("round_timeout_ms must be positive")
        if self.num_clusters < 1:
            raise ConfigError("num_clusters must be >= 1")


@dataclass(frozen=True)
class ClientHandle:
    client_id: str
    num_samples_hint: int = 0
    joined_at: int = 0


@dataclass(frozen=True)
class FitInstruction:
    """What a client trains this round.

    params holds one model in plain mode; cluster_params holds the full
    list in clustered mode (exactly one of the two is set).
    """

    round: int
    hyper: Hyperparams
    deadline_ms: int
    params: ModelParams | None = None
    cluster_params: tuple[ModelParams, ...] | None = None
    subround: int = 0

    def __post_init__(self) -> None:
        if (self.params is None) == (self.cluster_params is None):
            raise ConfigError("exactly one of params and cluster_params must be set")
        if self.cluster_params is not None:
            hashes = {p.spec_hash for p in self.cluster_params}
            if len(hashes) != 1:
                raise ShapeError("cluster models must share one spec")


@dataclass(frozen=True)
class FitResult:
    client_id: str
    params: ModelParams
    num_samples: int
    train_metrics: TrainMetrics
    cluster_id: int = 0


def sample_clients(
    available: list[ClientHandle],
    fraction: float,
    min_n: int,
    blacklist: frozenset[str] = frozenset(),
    rng_seed: int = 0,
) -> list[ClientHandle]:
    """Sample max(min_n, ceil(fraction * eligible)) clients without replacement.

    Blacklisted clients are never eligible.  Raises when fewer than min_n
    clients remain.  The returned list is sorted by client_id.
    """
    eligible = sorted(
        (h for h in available if h.client_id not in blacklist),
        key=lambda h: h.client_id,
    )
    if len(eligible) < min_n:
        raise InsufficientClientsError(
            f"{len(eligible)} eligible clients, need at least {min_n}"
        )
    want = min(len(eligible), max(min_n, math.ceil(fraction * len(eligible))))
    rng = np.random.default_rng(rng_seed & MASK64)
    picked = rng.choice(len(eligible), size=want, replace=False)
    return sorted((eligible[i] for i in picked), key=lambda h: h.client_id)


def _check_compatible(results: list[FitResult]) -> None:
    first = results[0].params
    for r in results[1:]:
        if r.params.spec_hash != first.spec_hash or r.params.shapes() != first.shapes():
            raise ShapeError("aggregation inputs come from different model specs")


def fedavg_aggregate(results: list[FitResult]) -> ModelParams:
    """Sample-count-weighted elementwise mean of the result params.

    Inputs are processed in ascending client_id order, so any permutation
    of the same results aggregates to bitwise identical output.  A single
    result, or results whose params are all bitwise identical, come back
    unchanged.
    """
    if not results:
        raise EmptyAggregationError("no fit results to aggregate")
    for r in results:
        if r.num_samples < 1:
            raise ConfigError("fit result reports no samples")
    _check_compatible(results)
    ordered = sorted(results, key=lambda r: r.client_id)
    first = ordered[0].params
    if len(ordered) == 1:
        return first
    if all(
        all(np.array_equal(a, b) for a, b in zip(r.params.layers, first.layers))
        for r in ordered[1:]
    ):
        # Replicas of one model average to that model exactly.
        return first
    total = float(sum(r.num_samples for r in ordered))
    summed = [np.zeros_like(arr) for arr in first.layers]
    for r in ordered:
        weight = float(r.num_samples)
        for i, arr in enumerate(r.params.layers):
            summed[i] += arr * weight
    return ModelParams(tuple(arr / total for arr in summed), first.spec_hash)


def ifca_assign(cluster_params: list[ModelParams], local_train: Dataset) -> int:
    """Index of the cluster model with the lowest loss on the local train split.

    Ties resolve to the lowest index.
    """
    if not cluster_params:
        raise ConfigError("no cluster models to choose from")
    best, best_loss = 0, math.inf
    for k, params in enumerate(cluster_params):
        loss = evaluate_model(params, local_train).eval_loss
        if loss < best_loss:
            best, best_loss = k, loss
    return best


def ifca_aggregate(
    cluster_params: list[ModelParams],
    results: list[FitResult],
) -> list[ModelParams]:
    """Per-cluster FedAvg; clusters that received no results stay frozen."""
    k = len(cluster_params)
    for r in results:
        if not (0 <= r.cluster_id < k):
            raise ConfigError(f"cluster_id {r.cluster_id} out of range for {k} clusters")
    out: list[ModelParams] = []
    for cluster in range(k):
        members = [r for r in results if r.cluster_id == cluster]
        out.append(fedavg_aggregate(members) if members else cluster_params[cluster])
    return out


def aggregate_evaluate(evals: list[tuple[str, EvalMetrics]]) -> tuple[float, float]:
    """Sample-weighted mean of (eval_loss, accuracy) over client results.

    A single result passes through unchanged; inputs are folded in
    ascending client_id order.
    """
    if not evals:
        raise EmptyAggregationError("no eval results to aggregate")
    ordered = sorted(evals, key=lambda pair: pair[0])
    if len(ordered) == 1:
        only = ordered[0][1]
        return only.eval_loss, only.accuracy
    total = float(sum(m.num_samples for _, m in ordered))
    loss = sum(m.eval_loss * m.num_samples for _, m in ordered) / total
    acc = sum(m.accuracy * m.num_samples for _, m in ordered) / total
    return loss, acc
