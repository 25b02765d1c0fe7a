"""The transport interface node code is written against.

Both the deterministic in-process simulator and the TCP transport expose
this surface, so collector and client logic is written exactly once and
cannot drift between the two.
"""
from __future__ import annotations

from typing import Protocol

from .envelope import Envelope


class NodeNetwork(Protocol):
    """One node's view of the network."""

    node_id: str

    def send(self, to: str, env: Envelope) -> None:
        """Fire-and-forget delivery; lost messages surface as timeouts."""
        ...

    def recv(self, timeout_ms: int | None = None) -> Envelope | None:
        """Next envelope, or None once timeout_ms elapses.

        timeout_ms=None blocks until a message arrives or the channel
        closes (ChannelClosed).  timeout_ms=0 drains without waiting.
        """
        ...

    def now_ms(self) -> int:
        """Monotonic clock in milliseconds (virtual under simulation)."""
        ...

    def sleep(self, ms: int) -> None:
        """Pause this node for ms milliseconds of clock time."""
        ...
