"""TCP realization of the node network.

The topology maps onto plain sockets: children open one connection to
their parent; parents listen and learn who is on each connection from the
sender field of the first envelope it carries.  Framing and encoding are
shared with the simulator, and sends are fire-and-forget in both
directions: a broken or unknown destination drops the message and the
round logic recovers through its deadlines, exactly as it would under the
simulator's fault injection.
"""
from __future__ import annotations

import logging
import queue
import socket
import threading
import time

from ..errors import ChannelClosed
from .envelope import Envelope
from .framing import FrameAssembler, encode_frame

log = logging.getLogger(__name__)

_RECV_CHUNK = 65536
_CLOSED = object()

DEFAULT_PORT = 8080


def _now_ms() -> int:
    return time.monotonic_ns() // 1_000_000


def _read_loop(sock: socket.socket, on_env, on_eof) -> None:
    assembler = FrameAssembler()
    try:
        while True:
            chunk = sock.recv(_RECV_CHUNK)
            if not chunk:
                break
            for env in assembler.feed(chunk):
                on_env(env)
    except OSError:
        pass
    except Exception:
        log.exception("reader thread failed")
    finally:
        on_eof()


class SocketClientNetwork:
    """A child node's single connection to its parent."""

    def __init__(
        self,
        node_id: str,
        parent_id: str,
        host: str,
        port: int,
        connect_attempts: int = 20,
        connect_delay_s: float = 0.25,
    ) -> None:
        self.node_id = node_id
        self.parent_id = parent_id
        self._inbox: queue.Queue[object] = queue.Queue()
        self._sock = self._connect(host, port, connect_attempts, connect_delay_s)
        self._send_lock = threading.Lock()
        self._reader = threading.Thread(
            target=_read_loop,
            args=(self._sock, self._inbox.put, lambda: self._inbox.put(_CLOSED)),
            name=f"reader-{node_id}",
            daemon=True,
        )
        self._reader.start()

    @staticmethod
    def _connect(host: str, port: int, attempts: int, delay_s: float) -> socket.socket:
        last: Exception | None = None
        for attempt in range(attempts):
            try:
                sock = socket.create_connection((host, port), timeout=10.0)
                sock.settimeout(None)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                return sock
            except OSError as exc:
                last = exc
                time.sleep(delay_s)
        raise ChannelClosed(f"could not reach {host}:{port} after {attempts} attempts: {last}")

    def send(self, to: str, env: Envelope) -> None:
        del to  # single channel: everything goes to the parent
        try:
            with self._send_lock:
                self._sock.sendall(encode_frame(env))
        except OSError:
            log.debug("send from %s failed, dropping %s", self.node_id, env.msg_type.value)

    def recv(self, timeout_ms: int | None = None) -> Envelope | None:
        try:
            item = self._inbox.get(
                timeout=None if timeout_ms is None else max(0.0, timeout_ms / 1000.0)
            )
        except queue.Empty:
            return None
        if item is _CLOSED:
            self._inbox.put(_CLOSED)  # stay closed for later calls
            raise ChannelClosed(f"parent connection of {self.node_id} closed")
        assert isinstance(item, Envelope)
        return item

    def now_ms(self) -> int:
        return _now_ms()

    def sleep(self, ms: int) -> None:
        time.sleep(max(0, ms) / 1000.0)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def __enter__(self) -> "SocketClientNetwork":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class SocketServerNetwork:
    """A parent node: listens for children, optionally connects upward too.

    Used by the collector (no upward link) and by mid-aggregators (their
    upward link doubles as just another message source feeding the same
    inbox).
    """

    def __init__(
        self,
        node_id: str,
        listen_port: int,
        parent_id: str | None = None,
        parent_host: str | None = None,
        parent_port: int | None = None,
        listen_host: str = "127.0.0.1",
    ) -> None:
        self.node_id = node_id
        self.parent_id = parent_id
        self._inbox: queue.Queue[object] = queue.Queue()
        self._conns: dict[str, socket.socket] = {}
        self._lock = threading.Lock()
        self._closing = False
        self._listener = socket.create_server((listen_host, listen_port), reuse_port=False)
        self.bound_port = self._listener.getsockname()[1]
        self._threads: list[threading.Thread] = []
        self._parent_net: SocketClientNetwork | None = None
        if parent_id is not None:
            assert parent_host is not None and parent_port is not None
            self._parent_net = SocketClientNetwork(node_id, parent_id, parent_host, parent_port)
            # Splice the parent's stream into our inbox so one recv loop
            # sees both directions.
            pump = threading.Thread(target=self._pump_parent, name=f"pump-{node_id}", daemon=True)
            pump.start()
            self._threads.append(pump)
        acceptor = threading.Thread(target=self._accept_loop, name=f"accept-{node_id}", daemon=True)
        acceptor.start()
        self._threads.append(acceptor)

    def _pump_parent(self) -> None:
        assert self._parent_net is not None
        try:
            while True:
                env = self._parent_net.recv(None)
                if env is not None:
                    self._inbox.put(env)
        except ChannelClosed:
            self._inbox.put(_CLOSED)

    def _accept_loop(self) -> None:
        while True:
            try:
                conn, addr = self._listener.accept()
            except OSError:
                return  # listener closed
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            reader = threading.Thread(
                target=_read_loop,
                args=(conn, lambda env, c=conn: self._on_child_env(env, c), lambda: None),
                name=f"child-reader-{self.node_id}",
                daemon=True,
            )
            reader.start()
            self._threads.append(reader)

    def _on_child_env(self, env: Envelope, conn: socket.socket) -> None:
        with self._lock:
            self._conns[env.sender] = conn
        if env.receiver != self.node_id:
            # A child talking to a peer it has no direct link to: the hub
            # relays (ring passes cross the star this way).
            self.send(env.receiver, env)
            return
        self._inbox.put(env)

    def send(self, to: str, env: Envelope) -> None:
        if self._parent_net is not None and to == self.parent_id:
            self._parent_net.send(to, env)
            return
        with self._lock:
            conn = self._conns.get(to)
        if conn is None:
            log.debug("%s has no connection to %s, dropping %s", self.node_id, to, env.msg_type.value)
            return
        try:
            with self._lock:
                conn.sendall(encode_frame(env))
        except OSError:
            log.debug("send %s -> %s failed, dropping", self.node_id, to)

    def recv(self, timeout_ms: int | None = None) -> Envelope | None:
        try:
            item = self._inbox.get(
                timeout=None if timeout_ms is None else max(0.0, timeout_ms / 1000.0)
            )
        except queue.Empty:
            return None
        if item is _CLOSED:
            self._inbox.put(_CLOSED)
            raise ChannelClosed(f"upstream connection of {self.node_id} closed")
        assert isinstance(item, Envelope)
        return item

    def now_ms(self) -> int:
        return _now_ms()

    def sleep(self, ms: int) -> None:
        time.sleep(max(0, ms) / 1000.0)

    def close(self) -> None:
        self._closing = True
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            conns = list(self._conns.values())
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        if self._parent_net is not None:
            self._parent_net.close()

    def __enter__(self) -> "SocketServerNetwork":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
