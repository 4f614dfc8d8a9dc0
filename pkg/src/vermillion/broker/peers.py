"""Broker-to-broker links: replication, forwarding and shovel connections."""

from __future__ import annotations

import logging
import queue
import threading
from typing import Callable, Iterable, Optional, TypeVar

from ..errors import NodeUnavailable, NotFound, PeerTimeout
from ..router import NodeDescriptor
from .client import BrokerClient
from .core import Message

log = logging.getLogger(__name__)

T = TypeVar("T")


class PeerLinks:
    """Pooled channels from one node to each of its peers.

    Transport failures surface as :class:`PeerTimeout`; errors reported by the
    peer itself pass through unchanged.
    """

    def __init__(self, node_id: str, peers: Iterable[NodeDescriptor], secret: str, timeout: float = 2.0):
        self.node_id = node_id
        self.secret = secret
        self.timeout = timeout
        self._lock = threading.Lock()
        self._peers: dict[str, NodeDescriptor] = {}
        self._idle: dict[str, queue.LifoQueue] = {}
        self.update(peers)

    def update(self, peers: Iterable[NodeDescriptor]) -> None:
        with self._lock:
            self._peers = {p.node_id: p for p in peers if p.node_id != self.node_id}
            for nid in self._peers:
                self._idle.setdefault(nid, queue.LifoQueue())

    def peer_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._peers)

    def connect(self, node_id: str) -> BrokerClient:
        with self._lock:
            peer = self._peers.get(node_id)
        if peer is None:
            raise NotFound(f"unknown peer {node_id}")
        return BrokerClient(peer.host, peer.port, secret=self.secret, timeout=self.timeout, node_id=node_id)

    def _call(self, node_id: str, fn: Callable[[BrokerClient], T]) -> T:
        idle = self._idle.get(node_id)
        if idle is None:
            raise NotFound(f"unknown peer {node_id}")
        try:
            client = idle.get_nowait()
        except queue.Empty:
            try:
                client = self.connect(node_id)
            except NodeUnavailable as exc:
                raise PeerTimeout(str(exc)) from exc
        try:
            result = fn(client)
        except NodeUnavailable as exc:
            client.close()
            raise PeerTimeout(f"peer {node_id}: {exc}") from exc
        except BaseException:
            idle.put(client)
            raise
        idle.put(client)
        return result

    def broadcast(self, event: dict) -> None:
        for nid in self.peer_ids():
            self._call(nid, lambda c: c.replicate(event))

    def enqueue(self, node_id: str, queue_name: str, messages: list[Message]) -> None:
        self._call(node_id, lambda c: c.enqueue(queue_name, messages))

    def consume(self, node_id: str, queue_name: str, max_messages: int, principal: Optional[str]) -> list[Message]:
        return self._call(node_id, lambda c: c.consume(queue_name, max_messages, as_=principal))

    def queue_stats(self, node_id: str, queue_name: str) -> dict:
        return self._call(node_id, lambda c: c.queue_stats(queue_name))

    def close(self) -> None:
        for idle in self._idle.values():
            while True:
                try:
                    idle.get_nowait().close()
                except queue.Empty:
                    break
