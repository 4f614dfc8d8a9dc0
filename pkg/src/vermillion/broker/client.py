"""Blocking client for one broker channel (one TCP connection)."""

from __future__ import annotations

import socket
import threading
from typing import Optional

from ..errors import NodeUnavailable, error_from_kind
from .core import Binding, Message, Shovel
from .protocol import encode_frame, pack_messages, read_frame, unpack_messages


class BrokerClient:
    """A connected, authenticated channel to a broker node.

    Transport failures mark the channel ``broken`` and raise
    :class:`NodeUnavailable`; broker-side errors are re-raised as the matching
    :mod:`vermillion.errors` class and leave the channel usable.
    """

    def __init__(
        self,
        host: str,
        port: int,
        secret: Optional[str] = None,
        apikey: Optional[str] = None,
        timeout: float = 10.0,
        node_id: str = "",
    ):
        self.node_id = node_id
        self.broken = False
        self._lock = threading.Lock()
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise NodeUnavailable(f"cannot reach broker {node_id or host}:{port}: {exc}") from exc
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._rfile = self._sock.makefile("rb")
        creds = {"secret": secret} if apikey is None else {"apikey": apikey}
        try:
            self.principal = self.call("auth", creds)[0]
        except Exception:
            self.close()
            raise

    def call(self, verb: str, args: Optional[dict] = None, blob: bytes = b"", as_: Optional[str] = None):
        frame = encode_frame({"verb": verb, "args": args or {}, "as": as_}, blob)
        with self._lock:
            if self.broken:
                raise NodeUnavailable(f"channel to {self.node_id} is broken")
            try:
                self._sock.sendall(frame)
                header, rblob = read_frame(self._rfile)
            except (OSError, EOFError, ValueError) as exc:
                self.broken = True
                raise NodeUnavailable(f"broker {self.node_id} connection failed: {exc!r}") from exc
        if not header.get("ok"):
            raise error_from_kind(header.get("error", "internal"), header.get("message", ""))
        return header.get("result"), rblob

    def close(self) -> None:
        self.broken = True
        try:
            self._rfile.close()
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- verbs ------------------------------------------------------------

    def ping(self) -> str:
        return self.call("ping")[0]

    def declare_exchange(self, name: str, as_: Optional[str] = None) -> None:
        self.call("declare_exchange", {"name": name}, as_=as_)

    def declare_queue(self, name: str, depth_limit: Optional[int] = None, as_: Optional[str] = None) -> None:
        self.call("declare_queue", {"name": name, "depth_limit": depth_limit}, as_=as_)

    def delete_exchange(self, name: str, as_: Optional[str] = None) -> None:
        self.call("delete_exchange", {"name": name}, as_=as_)

    def delete_queue(self, name: str, as_: Optional[str] = None) -> None:
        self.call("delete_queue", {"name": name}, as_=as_)

    def bind(
        self, exchange: str, queue: str, pattern: str, expires_at: Optional[float] = None, as_: Optional[str] = None
    ) -> None:
        args = {"exchange": exchange, "queue": queue, "pattern": pattern, "expires_at": expires_at}
        self.call("bind", args, as_=as_)

    def unbind(self, exchange: str, queue: str, pattern: str, as_: Optional[str] = None) -> None:
        self.call("unbind", {"exchange": exchange, "queue": queue, "pattern": pattern}, as_=as_)

    def publish(
        self,
        exchange: str,
        routing_key: str,
        payload: bytes,
        publisher: str = "",
        timestamp: int = 0,
        as_: Optional[str] = None,
    ) -> int:
        args = {"exchange": exchange, "routing_key": routing_key, "publisher": publisher, "timestamp": timestamp}
        return self.call("publish", args, payload, as_=as_)[0]

    def publish_batch(self, messages: list[Message], relayed: bool = False, as_: Optional[str] = None) -> int:
        metas, blob = pack_messages(messages)
        return self.call("publish_batch", {"messages": metas, "relayed": relayed}, blob, as_=as_)[0]

    def enqueue(self, queue: str, messages: list[Message], as_: Optional[str] = None) -> None:
        metas, blob = pack_messages(messages)
        self.call("enqueue", {"queue": queue, "messages": metas}, blob, as_=as_)

    def consume(self, queue: str, max_messages: int, as_: Optional[str] = None) -> list[Message]:
        result, blob = self.call("consume", {"queue": queue, "max_messages": max_messages}, as_=as_)
        return unpack_messages(result, blob)

    def peek(self, queue: str, max_messages: int, as_: Optional[str] = None) -> list[Message]:
        result, blob = self.call("peek", {"queue": queue, "max_messages": max_messages}, as_=as_)
        return unpack_messages(result, blob)

    def ack(self, queue: str, count: int, as_: Optional[str] = None) -> None:
        self.call("ack", {"queue": queue, "count": count}, as_=as_)

    def create_shovel(self, source_queue: str, dest_node: str, dest_exchange: str, as_: Optional[str] = None) -> str:
        args = {"source_queue": source_queue, "dest_node": dest_node, "dest_exchange": dest_exchange}
        return self.call("create_shovel", args, as_=as_)[0]

    def delete_shovel(self, shovel_id: str, as_: Optional[str] = None) -> None:
        self.call("delete_shovel", {"shovel_id": shovel_id}, as_=as_)

    def list_shovels(self) -> list[Shovel]:
        return [Shovel(**s) for s in self.call("list_shovels")[0]]

    def list_bindings(self, exchange: Optional[str] = None, queue: Optional[str] = None) -> list[Binding]:
        result = self.call("list_bindings", {"exchange": exchange, "queue": queue})[0]
        return [Binding(**b) for b in result]

    def list_exchanges(self) -> list[str]:
        return self.call("list_exchanges")[0]

    def list_queues(self) -> list[dict]:
        return self.call("list_queues")[0]

    def queue_stats(self, name: str) -> dict:
        return self.call("queue_stats", {"name": name})[0]

    def replicate(self, event: dict) -> None:
        self.call("replicate", {"event": event})
