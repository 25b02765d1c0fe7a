"""Local operations: the node that lives next to the data.

One node function covers three roles:

- leaf: train and evaluate on the local split when instructed.
- ring: same, but models also circulate around a peer ring, one training
  pass per hop, and whoever holds a model when the passes run out submits
  it upstream.
- mid:  an aggregator without data of its own; it re-runs the round
  protocol against its children for a configured number of sub-rounds and
  reports one combined result upward.

Nodes are stateless across rounds apart from the model they last held:
every instruction carries everything needed to act on it, so a node that
restarts can rejoin with a fresh JOIN and keep working.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

from .collector import collect_replies, parse_eval_result, parse_fit_result
from .data import Dataset, GenerationSpec, PartitionSpec, partition_dataset, train_test_split
from .errors import ChannelClosed, ConfigError, FedTopoError, ShapeError
from .models import (
    Hyperparams,
    ModelParams,
    ModelSpec,
    evaluate_model,
    train_local,
)
from .seeds import SALT_SPLIT, mix64, round_seed
from .strategy import StrategyConfig, aggregate_evaluate, fedavg_aggregate, ifca_assign
from .transport.envelope import (
    Envelope,
    MsgType,
    hyper_from_wire,
    hyper_to_wire,
    params_from_wire,
    params_to_wire,
)
from .transport.network import NodeNetwork

log = logging.getLogger(__name__)

ROLE_LEAF = "leaf"
ROLE_MID = "mid"
ROLE_RING = "ring"

JOIN_ATTEMPTS = 3
JOIN_ACK_TIMEOUT_MS = 2_000
JOIN_RETRY_SLEEP_MS = 100


@dataclass(frozen=True)
class LocalOpsConfig:
    """Startup configuration for one node.  Mid-aggregators carry no data
    fields; everyone else rebuilds its partition locally from the specs."""

    client_id: str
    client_index: int
    parent_id: str
    role: str
    run_seed: int
    model: ModelSpec
    generation: GenerationSpec | None = None
    partition: PartitionSpec | None = None
    partition_index: int | None = None
    local_rounds: int = 1
    ring_group: tuple[str, ...] = ()
    children: tuple[str, ...] = ()
    children_indices: tuple[int, ...] = ()
    child_strategy: StrategyConfig | None = None
    join_timeout_ms: int = 60_000

    def __post_init__(self) -> None:
        if self.role not in (ROLE_LEAF, ROLE_MID, ROLE_RING):
            raise ConfigError(f"unknown role {self.role!r}")
        if self.role == ROLE_MID:
            if not self.children or self.child_strategy is None:
                raise ConfigError("mid role needs children and a child strategy")
            if len(self.children) != len(self.children_indices):
                raise ConfigError("children and children_indices must align")
        else:
            if self.generation is None or self.partition is None or self.partition_index is None:
                raise ConfigError(f"{self.role} role needs data configuration")
        if self.role == ROLE_RING and self.client_id not in self.ring_group:
            raise ConfigError("ring member must appear in its own ring group")

    @property
    def ring_next(self) -> str | None:
        """Static successor on the ring, ignoring liveness."""
        if self.role != ROLE_RING:
            return None
        at = self.ring_group.index(self.client_id)
        return self.ring_group[(at + 1) % len(self.ring_group)]


class LocalOpsNode:
    """Runs the node protocol over any NodeNetwork."""

    def __init__(self, config: LocalOpsConfig, net: NodeNetwork) -> None:
        self.config = config
        self.net = net
        self.train_split: Dataset | None = None
        self.test_split: Dataset | None = None
        self.current_params: ModelParams | None = None
        self.round_watermark = 0  # lowest round still open (ring hygiene)
        self.registry: dict[str, int] = {}  # mid role: child -> samples hint

    # -- lifecycle -----------------------------------------------------------

    def run(self) -> str:
        try:
            self._prepare()
            if self.config.role == ROLE_MID and not self._await_children():
                return "failed"
            if not self._join():
                return "failed"
            return self._serve()
        except ChannelClosed:
            return "failed"
        except FedTopoError:
            log.exception("%s stopping on error", self.config.client_id)
            return "failed"

    def _prepare(self) -> None:
        if self.config.role == ROLE_MID:
            return
        assert self.config.generation and self.config.partition is not None
        full = self.config.generation.build()
        parts = partition_dataset(full, self.config.partition)
        mine = parts[self.config.partition_index]
        self.train_split, self.test_split = train_test_split(
            mine, seed=mix64(self.config.run_seed, SALT_SPLIT, self.config.client_index)
        )

    def _join(self) -> bool:
        if self.config.role == ROLE_MID:
            hint = sum(self.registry.values())
        else:
            assert self.train_split is not None
            hint = len(self.train_split)
        for attempt in range(JOIN_ATTEMPTS):
            self.net.send(
                self.config.parent_id,
                Envelope(
                    MsgType.JOIN,
                    self.config.client_id,
                    self.config.parent_id,
                    0,
                    {"client_id": self.config.client_id, "num_samples_hint": hint},
                ),
            )
            deadline = self.net.now_ms() + JOIN_ACK_TIMEOUT_MS
            while True:
                remaining = deadline - self.net.now_ms()
                if remaining <= 0:
                    break
                env = self.net.recv(remaining)
                if env is not None and env.msg_type == MsgType.JOIN_ACK:
                    return True
            self.net.sleep(JOIN_RETRY_SLEEP_MS)
        log.error("%s never received a join ack", self.config.client_id)
        return False

    def _serve(self) -> str:
        while True:
            env = self.net.recv(None)
            if env is None:
                continue
            if env.msg_type == MsgType.SHUTDOWN:
                if self.config.role == ROLE_MID:
                    self._fan_out(env.msg_type, env.round, {})
                return "done"
            try:
                self._dispatch(env)
            except (ConfigError, ShapeError) as exc:
                self._report_error(env, "bad-instruction", str(exc))

    def _dispatch(self, env: Envelope) -> None:
        if env.msg_type == MsgType.FIT_INSTRUCT:
            if self.config.role == ROLE_MID:
                self._mid_fit(env)
            elif self.config.role == ROLE_RING:
                self._ring_start(env)
            else:
                self._leaf_fit(env)
        elif env.msg_type == MsgType.EVAL_INSTRUCT:
            if self.config.role == ROLE_MID:
                self._mid_eval(env)
            else:
                self._leaf_eval(env)
        elif env.msg_type == MsgType.RING_PASS:
            self._ring_pass(env)
        elif env.msg_type == MsgType.ROUND_DONE:
            self.round_watermark = max(self.round_watermark, env.round + 1)
        elif env.msg_type == MsgType.MODEL_BROADCAST:
            if self.config.role == ROLE_MID:
                self._fan_out(env.msg_type, env.round, env.payload)
            elif "params" in env.payload:
                self.current_params = params_from_wire(env.payload["params"])
        elif env.msg_type == MsgType.JOIN and self.config.role == ROLE_MID:
            self._register_child(env)
        # anything else: stale or irrelevant, drop

    def _report_error(self, cause: Envelope, code: str, message: str) -> None:
        log.warning("%s: %s (%s)", self.config.client_id, message, code)
        self.net.send(
            self.config.parent_id,
            Envelope(
                MsgType.ERROR,
                self.config.client_id,
                self.config.parent_id,
                cause.round,
                {"code": code, "message": message},
            ),
        )

    # -- leaf behavior ----------------------------------------------------------

    def _check_shapes(self, params: ModelParams) -> ModelParams:
        expected_hash = self.config.model.fingerprint()
        if params.spec_hash != expected_hash:
            raise ShapeError(
                f"instruction model fingerprint {params.spec_hash} does not match local "
                f"spec {expected_hash}"
            )
        dims = self.config.model.layer_dims()
        got = [layer.shape for layer in params.layers]
        want = [shape for fi, fo in dims for shape in ((fi, fo), (1, fo))]
        if got != want:
            raise ShapeError(f"instruction layer shapes {got} do not match spec {want}")
        return params

    def _pick_model(self, payload: dict[str, Any]) -> tuple[ModelParams, int]:
        """The model this node acts on, and the cluster index it reports."""
        assert self.train_split is not None
        if "cluster_params" in payload:
            cluster_params = [
                self._check_shapes(params_from_wire(p)) for p in payload["cluster_params"]
            ]
            chosen = ifca_assign(cluster_params, self.train_split)
            params = cluster_params[chosen]
        else:
            params = self._check_shapes(params_from_wire(payload["params"]))
            chosen = 0
        return params, chosen

    def _send_fit_result(
        self,
        round_index: int,
        params: ModelParams,
        train_loss: float,
        num_samples: int,
        duration_ms: float,
        cluster_id: int = 0,
        subround: int = 0,
    ) -> None:
        self.net.send(
            self.config.parent_id,
            Envelope(
                MsgType.FIT_RESULT,
                self.config.client_id,
                self.config.parent_id,
                round_index,
                {
                    "client_id": self.config.client_id,
                    "params": params_to_wire(params),
                    "num_samples": num_samples,
                    "train_metrics": {
                        "train_loss": train_loss,
                        "num_samples": num_samples,
                        "duration_ms": duration_ms,
                    },
                    "cluster_id": cluster_id,
                    "subround": subround,
                },
            ),
        )

    def _leaf_fit(self, env: Envelope) -> None:
        assert self.train_split is not None
        params, cluster = self._pick_model(env.payload)
        hyper = hyper_from_wire(env.payload["hyper"])
        trained, metrics = train_local(params, self.train_split, hyper)
        self.current_params = trained
        self._send_fit_result(
            env.round,
            trained,
            metrics.train_loss,
            metrics.num_samples,
            metrics.duration_ms,
            cluster_id=cluster,
            subround=env.payload.get("subround", 0),
        )

    def _leaf_eval(self, env: Envelope) -> None:
        assert self.test_split is not None
        params, cluster = self._pick_model(env.payload)
        result = evaluate_model(params, self.test_split)
        self.net.send(
            self.config.parent_id,
            Envelope(
                MsgType.EVAL_RESULT,
                self.config.client_id,
                self.config.parent_id,
                env.round,
                {
                    "client_id": self.config.client_id,
                    "eval_loss": result.eval_loss,
                    "accuracy": result.accuracy,
                    "num_samples": result.num_samples,
                    "cluster_id": cluster,
                },
            ),
        )

    # -- ring behavior -----------------------------------------------------------

    def _ring_start(self, env: Envelope) -> None:
        if env.round < self.round_watermark:
            return  # stale instruction from a round already closed
        self.round_watermark = max(self.round_watermark, env.round)
        params, _ = self._pick_model(env.payload)
        hyper = hyper_from_wire(env.payload["hyper"])
        roster = set(env.payload.get("roster", self.config.ring_group))
        self._ring_step(params, env.round, 0, hyper, roster)

    def _ring_pass(self, env: Envelope) -> None:
        if self.config.role != ROLE_RING:
            return
        if env.round < self.round_watermark:
            return  # pass from a closed round
        self.round_watermark = max(self.round_watermark, env.round)
        params = self._check_shapes(params_from_wire(env.payload["params"]))
        hyper = hyper_from_wire(env.payload["hyper"])
        roster = set(env.payload.get("roster", self.config.ring_group))
        self._ring_step(params, env.round, int(env.payload["pass_index"]), hyper, roster)

    def _ring_step(
        self,
        params: ModelParams,
        round_index: int,
        pass_index: int,
        hyper: Hyperparams,
        roster: set[str],
    ) -> None:
        """Train the model one pass, then forward or submit it.

        Each member always trains with its own per-round seed; the epoch
        offset advances with the pass index so a model circling the ring
        receives the same batch schedule a multi-epoch local run would.
        """
        assert self.train_split is not None
        while True:
            my_hyper = Hyperparams(
                learning_rate=hyper.learning_rate,
                local_epochs=hyper.local_epochs,
                batch_size=hyper.batch_size,
                seed=round_seed(self.config.run_seed, self.config.client_index, round_index, 0),
            )
            params, metrics = train_local(
                params,
                self.train_split,
                my_hyper,
                epoch_offset=pass_index * hyper.local_epochs,
            )
            self.current_params = params
            pass_index += 1
            if pass_index >= self.config.local_rounds:
                self._send_fit_result(
                    round_index,
                    params,
                    metrics.train_loss,
                    metrics.num_samples,
                    metrics.duration_ms,
                )
                return
            successor = self._next_live(roster)
            if successor == self.config.client_id:
                continue  # alone on the ring: keep training locally
            self.net.send(
                successor,
                Envelope(
                    MsgType.RING_PASS,
                    self.config.client_id,
                    successor,
                    round_index,
                    {
                        "params": params_to_wire(params),
                        "pass_index": pass_index,
                        "hyper": hyper_to_wire(hyper),
                        "roster": sorted(roster),
                    },
                ),
            )
            return

    def _next_live(self, roster: set[str]) -> str:
        group = self.config.ring_group
        at = group.index(self.config.client_id)
        for step in range(1, len(group) + 1):
            candidate = group[(at + step) % len(group)]
            if candidate in roster or candidate == self.config.client_id:
                return candidate
        return self.config.client_id

    # -- mid-aggregator behavior ----------------------------------------------------

    def _register_child(self, env: Envelope) -> None:
        cid = env.payload["client_id"]
        self.registry[cid] = int(env.payload.get("num_samples_hint", 0))
        self.net.send(
            cid,
            Envelope(MsgType.JOIN_ACK, self.config.client_id, cid, env.round,
                     {"client_id": cid}),
        )

    def _await_children(self) -> bool:
        """All configured children must check in before the mid joins up."""
        deadline = self.net.now_ms() + self.config.join_timeout_ms
        expected = set(self.config.children)
        while set(self.registry) < expected:
            remaining = deadline - self.net.now_ms()
            if remaining <= 0:
                missing = sorted(expected - set(self.registry))
                log.error("%s never heard from children %s", self.config.client_id, missing)
                return False
            env = self.net.recv(remaining)
            if env is not None and env.msg_type == MsgType.JOIN:
                self._register_child(env)
        return True

    def _fan_out(self, msg_type: MsgType, round_index: int, payload: dict[str, Any]) -> None:
        for child in sorted(self.registry):
            self.net.send(
                child,
                Envelope(msg_type, self.config.client_id, child, round_index, dict(payload)),
            )

    def _child_index(self, child_id: str) -> int:
        return self.config.children_indices[self.config.children.index(child_id)]

    def _mid_fit(self, env: Envelope) -> None:
        strategy = self.config.child_strategy
        assert strategy is not None
        params = self._check_shapes(params_from_wire(env.payload["params"]))
        base_hyper = hyper_from_wire(env.payload["hyper"])
        round_index = env.round
        started = self.net.now_ms()
        current = params
        results: list = []
        for subround in range(self.config.local_rounds):
            deadline = self.net.now_ms() + strategy.round_timeout_ms
            expected = sorted(self.registry)
            for child in expected:
                hyper = Hyperparams(
                    learning_rate=base_hyper.learning_rate,
                    local_epochs=base_hyper.local_epochs,
                    batch_size=base_hyper.batch_size,
                    seed=round_seed(
                        self.config.run_seed, self._child_index(child), round_index, subround
                    ),
                )
                self.net.send(
                    child,
                    Envelope(
                        MsgType.FIT_INSTRUCT,
                        self.config.client_id,
                        child,
                        round_index,
                        {
                            "hyper": hyper_to_wire(hyper),
                            "deadline_ms": deadline,
                            "subround": subround,
                            "params": params_to_wire(current),
                        },
                    ),
                )
            replies = collect_replies(
                self.net,
                MsgType.FIT_RESULT,
                round_index,
                set(expected),
                deadline,
                subround=subround,
                on_join=self._register_child,
            )
            if len(replies) < strategy.min_fit_clients:
                self._report_error(
                    env,
                    "under-quorum",
                    f"subround {subround}: {len(replies)} of {len(expected)} children replied",
                )
                return
            results = sorted(
                (parse_fit_result(reply) for reply in replies.values()),
                key=lambda r: r.client_id,
            )
            current = fedavg_aggregate(results)
        total = sum(r.num_samples for r in results)
        loss = sum(r.train_metrics.train_loss * r.num_samples for r in results) / total
        self._send_fit_result(
            round_index,
            current,
            loss,
            total,
            float(self.net.now_ms() - started),
            subround=env.payload.get("subround", 0),
        )

    def _mid_eval(self, env: Envelope) -> None:
        strategy = self.config.child_strategy
        assert strategy is not None
        deadline = self.net.now_ms() + strategy.round_timeout_ms
        payload: dict[str, Any] = {"deadline_ms": deadline}
        for key in ("params", "cluster_params"):
            if key in env.payload:
                payload[key] = env.payload[key]
        round_index = env.round
        self._fan_out(MsgType.EVAL_INSTRUCT, round_index, payload)
        replies = collect_replies(
            self.net,
            MsgType.EVAL_RESULT,
            round_index,
            set(self.registry),
            deadline,
            on_join=self._register_child,
        )
        if not replies:
            self._report_error(env, "under-quorum", "no children evaluated")
            return
        parsed = {cid: parse_eval_result(reply) for cid, reply in replies.items()}
        flat = [(cid, metrics) for cid, (metrics, _) in parsed.items()]
        loss, accuracy = aggregate_evaluate(flat)
        total = sum(metrics.num_samples for metrics, _ in parsed.values())
        self.net.send(
            self.config.parent_id,
            Envelope(
                MsgType.EVAL_RESULT,
                self.config.client_id,
                self.config.parent_id,
                round_index,
                {
                    "client_id": self.config.client_id,
                    "eval_loss": loss,
                    "accuracy": accuracy,
                    "num_samples": total,
                    "cluster_id": 0,
                },
            ),
        )


def run_local_ops(config: LocalOpsConfig, net: NodeNetwork) -> str:
    """Convenience wrapper: build the node and run it to completion."""
    return LocalOpsNode(config, net).run()
