"""Deterministic in-process network simulator.

Node functions run on OS threads, but execution is logically single
threaded: a baton handoff guarantees exactly one runnable thread at any
instant, and a virtual clock plus a (time, seq) event heap decides who
runs next.  Node computation costs zero virtual time; time only advances
through message latency, recv timeouts, and sleeps.  Two runs of the same
node set with the same seed interleave identically, which is what the
byte-level reproducibility guarantees are built on.

Messages are pushed through the real envelope codec on every hop, so a
payload that would not survive TCP framing does not survive simulation
either.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import threading
from collections import deque
from typing import Callable

import numpy as np

from ..errors import ChannelClosed
from ..seeds import link_seed
from .envelope import Envelope
from .faults import FaultSpec, LinkState, sim_deliver
from .framing import decode_frame, encode_frame

log = logging.getLogger(__name__)

_EV_DELIVER = 0
_EV_TIMER = 1

# Wake values handed to a parked node.
_WAKE_MESSAGE = "message"
_WAKE_TIMEOUT = "timeout"
_WAKE_CLOSE = "close"


class _NodeRuntime:
    def __init__(self, node_id: str) -> None:
        self.node_id = node_id
        self.thread: threading.Thread | None = None
        self.baton = threading.Event()
        self.inbox: deque[Envelope] = deque()
        self.parked: str | None = None  # "recv" | "sleep" | None
        self.park_token = 0
        self.wake = _WAKE_MESSAGE
        self.started = False
        self.finished = False
        self.result: object = None
        self.error: BaseException | None = None


class SimNode:
    """The NodeNetwork handed to one node function."""

    def __init__(self, net: "SimNet", runtime: _NodeRuntime) -> None:
        self._net = net
        self._rt = runtime
        self.node_id = runtime.node_id

    def send(self, to: str, env: Envelope) -> None:
        self._net._post(self._rt.node_id, to, env)

    def recv(self, timeout_ms: int | None = None) -> Envelope | None:
        rt = self._rt
        if rt.inbox:
            return rt.inbox.popleft()
        if timeout_ms is not None and timeout_ms < 0:
            timeout_ms = 0
        rt.park_token += 1
        if timeout_ms is not None:
            self._net._schedule_timer(rt, self._net._now + timeout_ms, rt.park_token)
        wake = self._net._park(rt, "recv")
        if wake == _WAKE_CLOSE:
            raise ChannelClosed(f"simulation shut down while {rt.node_id} was receiving")
        if rt.inbox:
            return rt.inbox.popleft()
        return None

    def now_ms(self) -> int:
        return self._net._now

    def sleep(self, ms: int) -> None:
        rt = self._rt
        rt.park_token += 1
        self._net._schedule_timer(rt, self._net._now + max(0, ms), rt.park_token)
        wake = self._net._park(rt, "sleep")
        if wake == _WAKE_CLOSE:
            raise ChannelClosed(f"simulation shut down while {rt.node_id} was sleeping")


class SimNet:
    """Event-driven scheduler for a set of cooperating nodes."""

    def __init__(self, run_seed: int = 0, faults: list[FaultSpec] | None = None) -> None:
        self._run_seed = run_seed
        self._faults: tuple[FaultSpec, ...] = tuple(faults or ())
        self._now = 0
        self._seq = itertools.count()
        self._events: list[tuple[int, int, int, str, Envelope | int | None]] = []
        self._nodes: dict[str, _NodeRuntime] = {}
        self._mains: dict[str, Callable[[SimNode], object]] = {}
        self._links: dict[tuple[str, str], LinkState] = {}
        self._link_rngs: dict[tuple[str, str], np.random.Generator] = {}
        self._sched_baton = threading.Event()
        self.dropped_count = 0

    def add_node(self, node_id: str, main: Callable[[SimNode], object]) -> None:
        if node_id in self._nodes:
            raise ValueError(f"duplicate node id {node_id!r}")
        self._nodes[node_id] = _NodeRuntime(node_id)
        self._mains[node_id] = main

    # -- plumbing used by SimNode ------------------------------------------

    def _link(self, sender: str, receiver: str) -> LinkState:
        key = (sender, receiver)
        if key not in self._links:
            self._links[key] = LinkState(sender, receiver)
            self._link_rngs[key] = np.random.default_rng(
                link_seed(self._run_seed, sender, receiver)
            )
        return self._links[key]

    def _post(self, sender: str, receiver: str, env: Envelope) -> None:
        # Round-trip through the codec: simulation exercises the same
        # serialization the socket transport does.
        env = decode_frame(encode_frame(env))
        link = self._link(sender, receiver)
        deliver_at = sim_deliver(link, env, self._faults, self._now, self._link_rngs[(sender, receiver)])
        if deliver_at is None:
            self.dropped_count += 1
            log.debug("drop %s %s->%s round=%d", env.msg_type.value, sender, receiver, env.round)
            return
        seq = next(self._seq)
        link.enqueue(deliver_at, seq, env)
        heapq.heappush(self._events, (deliver_at, seq, _EV_DELIVER, receiver, None))

    def _schedule_timer(self, rt: _NodeRuntime, at_ms: int, token: int) -> None:
        heapq.heappush(self._events, (at_ms, next(self._seq), _EV_TIMER, rt.node_id, token))

    def _park(self, rt: _NodeRuntime, why: str) -> str:
        """Called on the node thread: yield control back to the scheduler."""
        rt.parked = why
        self._sched_baton.set()
        rt.baton.wait()
        rt.baton.clear()
        rt.parked = None
        return rt.wake

    def _resume(self, rt: _NodeRuntime, wake: str) -> None:
        """Called on the scheduler thread: run one node until it parks."""
        rt.wake = wake
        rt.baton.set()
        self._sched_baton.wait()
        self._sched_baton.clear()

    # -- execution ----------------------------------------------------------

    def _start_node(self, rt: _NodeRuntime) -> None:
        node = SimNode(self, rt)
        main = self._mains[rt.node_id]

        def body() -> None:
            rt.baton.wait()
            rt.baton.clear()
            try:
                rt.result = main(node)
            except ChannelClosed as exc:
                rt.result = exc
            except BaseException as exc:  # surfaced after run()
                rt.error = exc
            finally:
                rt.finished = True
                self._sched_baton.set()

        rt.thread = threading.Thread(target=body, name=f"sim-{rt.node_id}", daemon=True)
        rt.thread.start()
        rt.started = True
        self._resume(rt, _WAKE_MESSAGE)

    def run(self, until_ms: int | None = None) -> dict[str, object]:
        """Drive all nodes to completion and return their results.

        Nodes start in insertion order at virtual time 0.  When the event
        queue drains while some nodes are still parked, those nodes are
        woken with ChannelClosed so they can unwind; a node that swallows
        the close and parks again is woken the same way until it exits.
        Raises the first node exception after every thread has stopped.
        """
        for rt in self._nodes.values():
            self._start_node(rt)
        while True:
            if all(rt.finished for rt in self._nodes.values()):
                break
            if not self._events:
                self._close_parked()
                continue
            at_ms, seq, kind, node_id, detail = heapq.heappop(self._events)
            if until_ms is not None and at_ms > until_ms:
                self._close_parked()
                continue
            self._now = max(self._now, at_ms)
            rt = self._nodes.get(node_id)
            if kind == _EV_DELIVER:
                # Consume the link entry even when the receiver is gone,
                # otherwise later heads on the same link would jam.
                env = self._pop_delivery(node_id, at_ms, seq)
                if env is None or rt is None or rt.finished:
                    continue
                rt.inbox.append(env)
                if rt.parked == "recv":
                    rt.park_token += 1  # invalidate any pending timer
                    self._resume(rt, _WAKE_MESSAGE)
            else:  # timer
                if rt is None or rt.finished:
                    continue
                if rt.parked and detail == rt.park_token:
                    self._resume(rt, _WAKE_TIMEOUT)
        errors = [rt.error for rt in self._nodes.values() if rt.error is not None]
        if errors:
            raise errors[0]
        return {node_id: rt.result for node_id, rt in self._nodes.items()}

    def _pop_delivery(self, receiver: str, at_ms: int, seq: int) -> Envelope | None:
        # Per-link queues are sorted by (deliver_at, seq) and the global heap
        # hands events out in the same order, so the entry for this event is
        # at the head of exactly one link.
        for link in self._links.values():
            if link.receiver == receiver and link.pending and link.pending[0][:2] == (at_ms, seq):
                return link.pop()[2]
        return None

    def _close_parked(self) -> None:
        parked = [rt for rt in self._nodes.values() if not rt.finished and rt.parked]
        stuck = [rt for rt in self._nodes.values() if not rt.finished and not rt.parked]
        if stuck:
            names = [rt.node_id for rt in stuck]
            raise RuntimeError(f"nodes neither parked nor finished: {names}")
        for rt in sorted(parked, key=lambda r: r.node_id):
            if not rt.finished and rt.parked:
                rt.park_token += 1
                self._resume(rt, _WAKE_CLOSE)

    def link_state(self, sender: str, receiver: str) -> LinkState:
        """Introspection hook for tests."""
        return self._link(sender, receiver)
