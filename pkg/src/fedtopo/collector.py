"""The training collector: round orchestration and aggregation.

One collector drives a whole run: it waits for clients to join, then for
each round samples participants, broadcasts fit instructions, gathers
results until the deadline, aggregates, runs an evaluation sub-round, and
records metrics.  Slow or lost responses are simply absent at the
deadline; a round below quorum is retried once with a fresh sample before
the run aborts.

All nondeterminism is funneled through seeded choices: sampling seeds
derive from (run seed, round, attempt), clients receive their training
seed inside the instruction, and results are aggregated in client-id
order.  Under the simulated transport the same manifest therefore yields
byte-identical metrics and artifacts on every execution.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

from .data import Dataset
from .errors import ChannelClosed, InsufficientClientsError, StartupFailureError
from .models import (
    EvalMetrics,
    Hyperparams,
    ModelParams,
    ModelSpec,
    TrainMetrics,
    evaluate_model,
    init_model,
)
from .repository import MetricRecord, Repository
from .seeds import MASK64, SALT_EVAL_SAMPLE, SALT_FIT_SAMPLE, mix64, round_seed
from .strategy import (
    ClientHandle,
    FitResult,
    StrategyConfig,
    aggregate_evaluate,
    fedavg_aggregate,
    ifca_aggregate,
    sample_clients,
)
from .topology import TopologyPlan
from .transport.envelope import (
    Envelope,
    MsgType,
    hyper_to_wire,
    params_from_wire,
    params_to_wire,
)
from .transport.network import NodeNetwork

log = logging.getLogger(__name__)

# Round phases, in the only order they may advance (abort allowed anywhere).
PHASES = ("waiting_clients", "fitting", "aggregating", "evaluating", "done")
PHASE_ABORTED = "aborted"

STATUS_DONE = "done"
STATUS_ABORTED = "aborted"
STATUS_FAILED = "failed"


@dataclass(frozen=True)
class CollectorConfig:
    """Everything the collector needs to drive one run."""

    run_id: str
    run_seed: int
    total_rounds: int
    model: ModelSpec
    strategy: StrategyConfig
    plan: TopologyPlan
    learning_rate: float
    local_epochs: int
    batch_size: int
    client_indices: dict[str, int] = field(default_factory=dict)
    join_timeout_ms: int = 60_000
    checkpoint_every: int = 0
    holdout: Dataset | None = None


@dataclass
class RoundState:
    """Mutable bookkeeping for one round; kept in run history afterwards."""

    round: int
    phase: str = "waiting_clients"
    sampled: tuple[str, ...] = ()
    results: dict[str, FitResult] = field(default_factory=dict)
    eval_results: dict[str, tuple[EvalMetrics, int]] = field(default_factory=dict)
    cluster_assignments: dict[str, int] = field(default_factory=dict)
    duration_ms: int = 0
    abort_reason: str | None = None

    def advance(self, phase: str) -> None:
        if phase == PHASE_ABORTED:
            self.phase = phase
            return
        order = PHASES.index
        if self.phase == PHASE_ABORTED or order(phase) != order(self.phase) + 1:
            raise RuntimeError(f"illegal phase transition {self.phase} -> {phase}")
        self.phase = phase


@dataclass(frozen=True)
class RunSummary:
    run_id: str
    status: str
    rounds_completed: int
    final_accuracy: float | None
    unpersisted: bool = False


def parse_fit_result(env: Envelope) -> FitResult:
    payload = env.payload
    metrics = payload["train_metrics"]
    return FitResult(
        client_id=payload["client_id"],
        params=params_from_wire(payload["params"]),
        num_samples=int(payload["num_samples"]),
        train_metrics=TrainMetrics(
            train_loss=float(metrics["train_loss"]),
            num_samples=int(metrics["num_samples"]),
            duration_ms=float(metrics["duration_ms"]),
        ),
        cluster_id=int(payload["cluster_id"]),
    )


def parse_eval_result(env: Envelope) -> tuple[EvalMetrics, int]:
    payload = env.payload
    metrics = EvalMetrics(
        eval_loss=float(payload["eval_loss"]),
        accuracy=float(payload["accuracy"]),
        num_samples=int(payload["num_samples"]),
    )
    return metrics, int(payload["cluster_id"])


def collect_replies(
    net: NodeNetwork,
    want: MsgType,
    round_index: int,
    expected: set[str],
    deadline_ms: int,
    subround: int | None = None,
    on_join: Callable[[Envelope], None] | None = None,
) -> dict[str, Envelope]:
    """Gather one reply of type `want` from each expected sender.

    Anything else that arrives meanwhile is dealt with in place: joins go
    to the registration callback, errors are logged and count as a missing
    reply, and stale messages (wrong round, wrong subround, unexpected or
    duplicate sender) are dropped.  Returns when every expected sender has
    replied or the deadline passes.
    """
    got: dict[str, Envelope] = {}
    while len(got) < len(expected):
        remaining = deadline_ms - net.now_ms()
        if remaining <= 0:
            break
        env = net.recv(remaining)
        if env is None:
            break
        if env.msg_type == MsgType.JOIN:
            if on_join is not None:
                on_join(env)
            continue
        if env.msg_type == MsgType.ERROR:
            log.warning(
                "%s reported: %s (%s)",
                env.sender,
                env.payload.get("message"),
                env.payload.get("code"),
            )
            continue
        if env.msg_type != want or env.round != round_index:
            continue
        if subround is not None and env.payload.get("subround", 0) != subround:
            continue
        if env.sender not in expected or env.sender in got:
            continue
        got[env.sender] = env
    return got


class TrainingCollector:
    """Drives rounds over any NodeNetwork; owns models, registry, metrics."""

    def __init__(
        self,
        config: CollectorConfig,
        net: NodeNetwork,
        repository: Repository | None = None,
    ) -> None:
        self.config = config
        self.net = net
        self.repository = repository
        kind = config.plan.kind
        cluster_count = config.strategy.num_clusters if kind == "clustered" else 1
        self.models: list[ModelParams] = [
            init_model(config.model, (config.run_seed + k) & MASK64)
            for k in range(cluster_count)
        ]
        self.registry: dict[str, ClientHandle] = {}
        self.last_seen: dict[str, int] = {}
        self.history: list[RoundState] = []
        self.metrics: list[MetricRecord] = []
        self.current_round = 0
        self.unpersisted = False

    # -- registration ------------------------------------------------------

    def _register(self, env: Envelope) -> None:
        cid = env.payload["client_id"]
        if cid not in self.registry:
            self.registry[cid] = ClientHandle(
                client_id=cid,
                num_samples_hint=int(env.payload.get("num_samples_hint", 0)),
                joined_at=self.current_round,
            )
            log.info("registered %s (total %d)", cid, len(self.registry))
        self.last_seen[cid] = self.current_round
        self.net.send(
            cid,
            Envelope(MsgType.JOIN_ACK, self.config.plan.collector_id, cid, self.current_round,
                     {"client_id": cid}),
        )

    def _note_seen(self, sender: str) -> None:
        if sender in self.registry:
            self.last_seen[sender] = self.current_round

    def _eligible_handles(self) -> list[ClientHandle]:
        blacklist = self.config.strategy.blacklist
        return [h for h in self.registry.values() if h.client_id not in blacklist]

    def await_min_clients(self) -> list[ClientHandle]:
        """Block until the strategy minimum has joined, then drain any
        joins already in flight so same-instant arrivals all register."""
        deadline = self.net.now_ms() + self.config.join_timeout_ms
        needed = self.config.strategy.min_available_clients
        while len(self._eligible_handles()) < needed:
            remaining = deadline - self.net.now_ms()
            if remaining <= 0:
                raise StartupFailureError(
                    f"only {len(self._eligible_handles())} of {needed} clients joined in time"
                )
            env = self.net.recv(remaining)
            if env is None:
                continue
            if env.msg_type == MsgType.JOIN:
                self._register(env)
        while True:
            env = self.net.recv(0)
            if env is None:
                break
            if env.msg_type == MsgType.JOIN:
                self._register(env)
        return sorted(self._eligible_handles(), key=lambda h: h.client_id)

    # -- metric plumbing ----------------------------------------------------

    def _emit(self, round_index: int, scope: str, metric: str, value: float) -> None:
        record = MetricRecord(self.config.run_id, round_index, scope, metric, float(value))
        self.metrics.append(record)
        if self.repository is not None:
            try:
                self.repository.append_metric(record)
            except OSError:
                log.exception("metric write failed; continuing unpersisted")
                self.unpersisted = True

    def _checkpoint(self, label: str) -> None:
        if self.repository is None:
            return
        try:
            if len(self.models) == 1:
                self.repository.store_artifact(self.config.run_id, label, self.models[0])
            else:
                for k, params in enumerate(self.models):
                    self.repository.store_artifact(
                        self.config.run_id, f"{label}-cluster{k}", params
                    )
        except OSError:
            log.exception("artifact write failed; continuing unpersisted")
            self.unpersisted = True

    # -- instruction fan-out -------------------------------------------------

    def _model_payload(self) -> dict[str, Any]:
        if len(self.models) == 1:
            return {"params": params_to_wire(self.models[0])}
        return {"cluster_params": [params_to_wire(p) for p in self.models]}

    def _fit_payload(self, client_id: str, round_index: int, deadline_ms: int) -> dict[str, Any]:
        index = self.config.client_indices.get(client_id, 0)
        hyper = Hyperparams(
            learning_rate=self.config.learning_rate,
            local_epochs=self.config.local_epochs,
            batch_size=self.config.batch_size,
            seed=round_seed(self.config.run_seed, index, round_index, 0),
        )
        payload = {
            "hyper": hyper_to_wire(hyper),
            "deadline_ms": deadline_ms,
            "subround": 0,
        }
        payload.update(self._model_payload())
        return payload

    # -- the round state machine ----------------------------------------------

    def execute_round(self, round_index: int) -> RoundState:
        self.current_round = round_index
        state = RoundState(round=round_index)
        started = self.net.now_ms()
        collected: dict[str, Envelope] = {}
        for attempt in (0, 1):
            try:
                if self.config.plan.kind == "star_ring":
                    expected = self._ring_roster(round_index)
                else:
                    sampled = sample_clients(
                        self._eligible_handles(),
                        self.config.strategy.fit_fraction,
                        self.config.strategy.min_fit_clients,
                        self.config.strategy.blacklist,
                        rng_seed=mix64(
                            self.config.run_seed, SALT_FIT_SAMPLE, round_index, attempt
                        ),
                    )
                    expected = [h.client_id for h in sampled]
            except InsufficientClientsError as exc:
                if attempt == 0:
                    log.warning("round %d attempt 0: %s; retrying", round_index, exc)
                    continue
                state.abort_reason = str(exc)
                state.advance(PHASE_ABORTED)
                return state
            if state.phase == "waiting_clients":
                state.advance("fitting")
            state.sampled = tuple(expected)
            deadline = self.net.now_ms() + self._round_window_ms()
            for cid in expected:
                payload = self._fit_payload(cid, round_index, deadline)
                if self.config.plan.kind == "star_ring":
                    payload["roster"] = list(expected)
                self.net.send(
                    cid,
                    Envelope(MsgType.FIT_INSTRUCT, self.config.plan.collector_id, cid,
                             round_index, payload),
                )
            collected = collect_replies(
                self.net,
                MsgType.FIT_RESULT,
                round_index,
                set(expected),
                deadline,
                subround=0,
                on_join=self._register,
            )
            for sender in collected:
                self._note_seen(sender)
            if len(collected) >= self.config.strategy.min_fit_clients:
                break
            if attempt == 1:
                state.abort_reason = (
                    f"{len(collected)} results, need {self.config.strategy.min_fit_clients}"
                )
                state.advance(PHASE_ABORTED)
                return state
            log.warning(
                "round %d got %d of %d results; retrying with a fresh sample",
                round_index,
                len(collected),
                len(expected),
            )
        state.results = {cid: parse_fit_result(env) for cid, env in collected.items()}
        state.cluster_assignments = {
            cid: result.cluster_id for cid, result in state.results.items()
        }
        state.advance("aggregating")
        results = list(state.results.values())
        if len(self.models) > 1:
            self.models = ifca_aggregate(self.models, results)
        else:
            self.models = [fedavg_aggregate(results)]
        state.advance("evaluating")
        self._eval_subround(round_index, state)
        if self.config.plan.kind == "star_ring":
            for cid in state.sampled:
                self.net.send(
                    cid,
                    Envelope(MsgType.ROUND_DONE, self.config.plan.collector_id, cid,
                             round_index, {}),
                )
        state.duration_ms = self.net.now_ms() - started
        self._emit_round_metrics(state)
        if self.config.checkpoint_every and round_index % self.config.checkpoint_every == 0:
            self._checkpoint(f"round-{round_index}")
        state.advance("done")
        return state

    def _round_window_ms(self) -> int:
        # Hierarchical mids spend local_rounds sub-windows downstream, so
        # the collector allows them proportionally more time.
        window = self.config.strategy.round_timeout_ms
        if self.config.plan.kind == "hierarchical":
            window *= self.config.plan.local_rounds + 1
        return window

    def _ring_roster(self, round_index: int) -> list[str]:
        """All eligible clients that were seen no later than last round.

        A member that missed a whole round drops off the roster (its ring
        neighbours route around it) and rejoins as soon as any message
        from it arrives.
        """
        roster = [
            h.client_id
            for h in self._eligible_handles()
            if self.last_seen.get(h.client_id, -1) >= round_index - 1
        ]
        if len(roster) < self.config.strategy.min_fit_clients:
            raise InsufficientClientsError(
                f"ring roster has {len(roster)} members, need "
                f"{self.config.strategy.min_fit_clients}"
            )
        return sorted(roster)

    def _eval_subround(self, round_index: int, state: RoundState) -> None:
        try:
            sampled = sample_clients(
                self._eligible_handles(),
                self.config.strategy.eval_fraction,
                1,
                self.config.strategy.blacklist,
                rng_seed=mix64(self.config.run_seed, SALT_EVAL_SAMPLE, round_index),
            )
        except InsufficientClientsError:
            return
        deadline = self.net.now_ms() + self._round_window_ms()
        payload = {"deadline_ms": deadline}
        payload.update(self._model_payload())
        for handle in sampled:
            self.net.send(
                handle.client_id,
                Envelope(MsgType.EVAL_INSTRUCT, self.config.plan.collector_id,
                         handle.client_id, round_index, payload),
            )
        replies = collect_replies(
            self.net,
            MsgType.EVAL_RESULT,
            round_index,
            {h.client_id for h in sampled},
            deadline,
            on_join=self._register,
        )
        for sender in replies:
            self._note_seen(sender)
        state.eval_results = {
            cid: parse_eval_result(env) for cid, env in replies.items()
        }

    def _emit_round_metrics(self, state: RoundState) -> None:
        r = state.round
        self._emit(r, "global", "participants", float(len(state.results)))
        if state.eval_results:
            flat = [(cid, metrics) for cid, (metrics, _) in state.eval_results.items()]
            loss, acc = aggregate_evaluate(flat)
            self._emit(r, "global", "aggregated_eval_loss", loss)
            self._emit(r, "global", "global_accuracy", acc)
        if len(self.models) > 1:
            by_cluster: dict[int, list[tuple[str, EvalMetrics]]] = {}
            for cid, (metrics, cluster) in state.eval_results.items():
                by_cluster.setdefault(cluster, []).append((cid, metrics))
            for cluster in sorted(by_cluster):
                loss, acc = aggregate_evaluate(by_cluster[cluster])
                self._emit(r, f"cluster:{cluster}", "eval_loss", loss)
                self._emit(r, f"cluster:{cluster}", "accuracy", acc)
        if self.config.holdout is not None:
            result = evaluate_model(self.models[0], self.config.holdout)
            self._emit(r, "global", "eval_loss", result.eval_loss)
            self._emit(r, "global", "accuracy", result.accuracy)
        for cid in sorted(state.results):
            self._emit(r, f"client:{cid}", "train_loss", state.results[cid].train_metrics.train_loss)
        self._emit(r, "global", "duration_ms", float(state.duration_ms))

    # -- whole run -------------------------------------------------------------

    def run(self) -> RunSummary:
        try:
            self.await_min_clients()
        except StartupFailureError as exc:
            log.error("startup failed: %s", exc)
            return self._finalize(STATUS_ABORTED)
        except ChannelClosed:
            return self._finalize(STATUS_FAILED)
        status = STATUS_DONE
        try:
            for round_index in range(1, self.config.total_rounds + 1):
                state = self.execute_round(round_index)
                self.history.append(state)
                if state.phase == PHASE_ABORTED:
                    log.error("round %d aborted: %s", round_index, state.abort_reason)
                    status = STATUS_ABORTED
                    break
        except ChannelClosed:
            status = STATUS_FAILED
        return self._finalize(status)

    def _finalize(self, status: str) -> RunSummary:
        completed = sum(1 for s in self.history if s.phase == "done")
        final_accuracy: float | None = None
        for state in reversed(self.history):
            if state.phase == "done" and state.eval_results:
                flat = [(cid, metrics) for cid, (metrics, _) in state.eval_results.items()]
                _, final_accuracy = aggregate_evaluate(flat)
                break
        self._checkpoint("final")
        broadcast = self._model_payload()
        for cid in sorted(self.registry):
            try:
                self.net.send(
                    cid,
                    Envelope(MsgType.MODEL_BROADCAST, self.config.plan.collector_id, cid,
                             self.current_round, broadcast),
                )
                self.net.send(
                    cid,
                    Envelope(MsgType.SHUTDOWN, self.config.plan.collector_id, cid,
                             self.current_round, {}),
                )
            except ChannelClosed:
                pass
        summary = RunSummary(
            run_id=self.config.run_id,
            status=status,
            rounds_completed=completed,
            final_accuracy=final_accuracy,
            unpersisted=self.unpersisted,
        )
        if self.repository is not None:
            try:
                self.repository.update_status(
                    self.config.run_id,
                    {
                        "status": summary.status,
                        "rounds_completed": summary.rounds_completed,
                        "final_accuracy": summary.final_accuracy,
                        "unpersisted": summary.unpersisted,
                    },
                )
            except OSError:
                log.exception("status write failed")
                self.unpersisted = True
        return summary
