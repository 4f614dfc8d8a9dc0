"""Broker node selection.

A principal (the owning provider id) is mapped to one broker node:

* ``FEDERATED``: a modular hash of the first character of the name picks a
  bucket in ``[1, node_count]`` and the node holding that bucket serves it.
* ``CLUSTERED``: a shared cursor round-robins over the nodes.
* ``SINGLE``: the only node.

The first-letter hash is deliberately simple. It is neither uniform nor
consistent under topology changes, and resources do not migrate when nodes
are added or removed.
"""

from __future__ import annotations

import enum
import json
import os
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

from .errors import Conflict, InvalidArgument, NodeUnavailable, NotFound

MODE_ENV = "VERMILLION_MODE"


class RoutingMode(str, enum.Enum):
    SINGLE = "single"
    FEDERATED = "federated"
    CLUSTERED = "clustered"

    @classmethod
    def parse(cls, value: Union[str, "RoutingMode"]) -> "RoutingMode":
        if isinstance(value, RoutingMode):
            return value
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise InvalidArgument(f"unknown routing mode {value!r}") from None


@dataclass(frozen=True)
class NodeDescriptor:
    node_id: str
    host: str
    port: int
    bucket: int = 0
    alive: bool = True

    @property
    def address(self) -> tuple[str, int]:
        return (self.host, self.port)

    def to_dict(self) -> dict:
        return {"node_id": self.node_id, "host": self.host, "port": self.port, "bucket": self.bucket}


def compute_bucket(username: Union[str, bytes], node_count: int) -> int:
    """Return ``(k mod node_count) + 1`` for the first character of *username*.

    ``k`` is the lowercased first byte minus 96, so ``a`` is 1 and ``z`` is 26.
    Bytes outside ``a..z`` take the non-negative remainder, which keeps the
    result inside ``[1, node_count]`` for any input.
    """
    if isinstance(username, str):
        username = username.encode("utf-8")
    if not username:
        raise InvalidArgument("username must be non-empty")
    if node_count < 1:
        raise InvalidArgument("node_count must be >= 1")
    first = username[:1].lower()[0]
    k = first - 96
    return (k % node_count) + 1


HashStrategy = Callable[[Union[str, bytes], int], int]


class NodeRegistry:
    """Thread-safe set of broker nodes with contiguous buckets ``1..n``."""

    def __init__(self, nodes: Iterable[NodeDescriptor] = ()):
        self._lock = threading.RLock()
        self._nodes: list[NodeDescriptor] = []
        for node in nodes:
            self.register_node(node)

    def register_node(self, descriptor: NodeDescriptor) -> list[NodeDescriptor]:
        with self._lock:
            if any(n.node_id == descriptor.node_id for n in self._nodes):
                raise Conflict(f"node {descriptor.node_id!r} already registered")
            if any(n.address == descriptor.address for n in self._nodes):
                raise Conflict(f"address {descriptor.host}:{descriptor.port} already registered")
            self._nodes.append(descriptor)
            # explicit buckets keep their order; unset ones go last
            self._nodes.sort(key=lambda n: (n.bucket <= 0, n.bucket))
            self._renumber()
            return list(self._nodes)

    def remove_node(self, node_id: str) -> list[NodeDescriptor]:
        with self._lock:
            for i, n in enumerate(self._nodes):
                if n.node_id == node_id:
                    del self._nodes[i]
                    self._renumber()
                    return list(self._nodes)
            raise NotFound(f"node {node_id!r} not registered")

    def set_alive(self, node_id: str, alive: bool) -> None:
        with self._lock:
            for i, n in enumerate(self._nodes):
                if n.node_id == node_id:
                    self._nodes[i] = replace(n, alive=alive)
                    return
            raise NotFound(f"node {node_id!r} not registered")

    def get(self, node_id: str) -> NodeDescriptor:
        with self._lock:
            for n in self._nodes:
                if n.node_id == node_id:
                    return n
        raise NotFound(f"node {node_id!r} not registered")

    def by_bucket(self, bucket: int) -> NodeDescriptor:
        with self._lock:
            return self._nodes[bucket - 1]

    def nodes(self) -> list[NodeDescriptor]:
        with self._lock:
            return list(self._nodes)

    def __len__(self) -> int:
        with self._lock:
            return len(self._nodes)

    def _renumber(self) -> None:
        self._nodes = [replace(n, bucket=i + 1) for i, n in enumerate(self._nodes)]


class Router:
    """Resolve principals to nodes according to a :class:`RoutingMode`."""

    def __init__(
        self,
        registry: NodeRegistry,
        mode: Union[RoutingMode, str] = RoutingMode.FEDERATED,
        hash_fn: HashStrategy = compute_bucket,
    ):
        self.registry = registry
        self.mode = RoutingMode.parse(mode)
        self.hash_fn = hash_fn
        self._cursor = 0
        self._cursor_lock = threading.Lock()
        if self.mode is RoutingMode.SINGLE and len(registry) != 1:
            raise InvalidArgument("single mode requires exactly one node")

    def resolve_node(self, principal: Union[str, bytes]) -> NodeDescriptor:
        nodes = self.registry.nodes()
        if not nodes:
            raise NodeUnavailable("no broker nodes registered")
        if self.mode is RoutingMode.SINGLE:
            node = nodes[0]
        elif self.mode is RoutingMode.FEDERATED:
            bucket = self.hash_fn(principal, len(nodes))
            node = nodes[bucket - 1]
        else:
            with self._cursor_lock:
                node = nodes[self._cursor % len(nodes)]
                self._cursor = (self._cursor + 1) % len(nodes)
        if not node.alive:
            raise NodeUnavailable(f"node {node.node_id} is not alive")
        return node

    def home_node(self, principal: Union[str, bytes]) -> Optional[NodeDescriptor]:
        """Deterministic owner node, or ``None`` when the mode has no fixed home."""
        if self.mode is RoutingMode.CLUSTERED:
            return None
        return self.resolve_node(principal)


def load_topology(path: Union[str, Path]) -> tuple[NodeRegistry, Optional[RoutingMode]]:
    """Read a topology file.

    The file is JSON: ``{"mode": "federated", "nodes": [{"node_id": ..., "host": ...,
    "port": ..., "bucket": ...}, ...]}``. ``mode`` is optional; the
    ``VERMILLION_MODE`` environment variable overrides it.
    """
    doc = json.loads(Path(path).read_text())
    nodes = [
        NodeDescriptor(
            node_id=str(entry["node_id"]),
            host=entry.get("host", "127.0.0.1"),
            port=int(entry["port"]),
            bucket=int(entry.get("bucket", 0)),
        )
        for entry in doc["nodes"]
    ]
    buckets = sorted(n.bucket for n in nodes)
    if all(b > 0 for b in buckets) and buckets != list(range(1, len(nodes) + 1)):
        raise InvalidArgument(f"buckets must be exactly 1..{len(nodes)}, got {buckets}")
    mode = os.environ.get(MODE_ENV) or doc.get("mode")
    return NodeRegistry(nodes), RoutingMode.parse(mode) if mode else None


def dump_topology(path: Union[str, Path], nodes: Iterable[NodeDescriptor], mode: RoutingMode) -> None:
    doc = {"mode": mode.value, "nodes": [n.to_dict() for n in nodes]}
    Path(path).write_text(json.dumps(doc, indent=2))
