"""Declarative fault injection for the simulated transport.

A FaultSpec targets either one client (all its links, both directions) or
one undirected link, and can drop messages probabilistically, add fixed
latency, and take the target down for a window of rounds.  Drop draws
come from a dedicated per-directed-link RNG, so fault outcomes are
reproducible and independent of everything else in the run.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigError
from .envelope import Envelope

LINK_UP = "up"
LINK_DOWN = "down"


@dataclass(frozen=True)
class FaultSpec:
    """target is a client id, or an (a, b) pair naming one undirected link."""

    target: str | tuple[str, str]
    drop_prob: float = 0.0
    latency_ms: int = 0
    disconnect_at_round: int | None = None
    reconnect_at_round: int | None = None

    def __post_init__(self) -> None:
        if isinstance(self.target, (list, tuple)):
            if len(self.target) != 2:
                raise ConfigError("link target must name exactly two endpoints")
            object.__setattr__(self, "target", (str(self.target[0]), str(self.target[1])))
        elif not self.target:
            raise ConfigError("fault target must be non-empty")
        if not (0.0 <= self.drop_prob <= 1.0):
            raise ConfigError("drop_prob must be in [0, 1]")
        if self.latency_ms < 0:
            raise ConfigError("latency_ms must be >= 0")
        if self.disconnect_at_round is not None and self.disconnect_at_round < 0:
            raise ConfigError("disconnect_at_round must be >= 0")
        if self.reconnect_at_round is not None:
            if self.disconnect_at_round is None:
                raise ConfigError("reconnect_at_round requires disconnect_at_round")
            if self.reconnect_at_round <= self.disconnect_at_round:
                raise ConfigError("reconnect_at_round must come after disconnect_at_round")

    def matches(self, sender: str, receiver: str) -> bool:
        if isinstance(self.target, tuple):
            return {sender, receiver} == set(self.target)
        return self.target in (sender, receiver)


def lifecycle_state(fault: FaultSpec, round_index: int) -> str:
    """LINK_DOWN while round_index falls inside the disconnect window."""
    if fault.disconnect_at_round is None or round_index < fault.disconnect_at_round:
        return LINK_UP
    if fault.reconnect_at_round is not None and round_index >= fault.reconnect_at_round:
        return LINK_UP
    return LINK_DOWN


@dataclass
class LinkState:
    """Bookkeeping for one directed link inside the simulator."""

    sender: str
    receiver: str
    status: str = LINK_UP
    pending: list[tuple[int, int, Envelope]] = field(default_factory=list)

    def enqueue(self, deliver_at: int, seq: int, env: Envelope) -> None:
        bisect.insort(self.pending, (deliver_at, seq, env), key=lambda item: item[:2])

    def pop(self) -> tuple[int, int, Envelope]:
        return self.pending.pop(0)


def sim_deliver(
    link: LinkState,
    env: Envelope,
    faults: Sequence[FaultSpec],
    now_ms: int,
    rng: np.random.Generator,
) -> int | None:
    """Decide one send's fate: delivery time, or None when dropped.

    The
    matching faults are consulted in declaration order; one uniform draw
    is taken per matching fault with drop_prob > 0 regardless of earlier
    outcomes, so the RNG stream stays aligned.  Latencies of all matching
    faults add up.  A link whose lifecycle window says down drops
    everything silently.
    """
    matching = [f for f in faults if f.matches(link.sender, link.receiver)]
    if any(lifecycle_state(f, env.round) == LINK_DOWN for f in matching):
        link.status = LINK_DOWN
        return None
    link.status = LINK_UP
    dropped = False
    latency = 0
    for fault in matching:
        if fault.drop_prob > 0.0 and rng.random() < fault.drop_prob:
            dropped = True
        latency += fault.latency_ms
    if dropped:
        return None
    return now_ms + latency
