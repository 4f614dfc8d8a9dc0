"""Per-node pool of authenticated broker channels."""

from __future__ import annotations

import threading
import time
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator

from ..errors import PoolExhausted
from ..router import NodeDescriptor


@dataclass
class _NodePool:
    free: deque = field(default_factory=deque)
    leased: int = 0
    created: int = 0
    reused: int = 0
    discarded: int = 0


class ChannelPool:
    """Reuse broker channels across requests.

    ``connect`` opens and authenticates a new channel for a node descriptor;
    ``lookup`` maps a node id to its descriptor. With ``pooled=False`` every
    acquire opens a fresh channel and every release closes it, which is the
    unpooled baseline.
    """

    def __init__(
        self,
        connect: Callable[[NodeDescriptor], object],
        lookup: Callable[[str], NodeDescriptor],
        max_per_node: int = 16,
        timeout: float = 5.0,
        pooled: bool = True,
    ):
        if max_per_node < 1:
            raise ValueError("max_per_node must be positive")
        self.connect = connect
        self.lookup = lookup
        self.max_per_node = max_per_node
        self.timeout = timeout
        self.pooled = pooled
        self._cond = threading.Condition()
        self._nodes: dict[str, _NodePool] = {}

    def _node(self, node_id: str) -> _NodePool:
        pool = self._nodes.get(node_id)
        if pool is None:
            pool = self._nodes[node_id] = _NodePool()
        return pool

    def acquire_channel(self, node_id: str):
        node = self.lookup(node_id)
        deadline = time.monotonic() + self.timeout
        with self._cond:
            pool = self._node(node_id)
            while True:
                while self.pooled and pool.free:
                    channel = pool.free.pop()
                    if getattr(channel, "broken", False):
                        pool.discarded += 1
                        continue
                    pool.leased += 1
                    pool.reused += 1
                    return channel
                if pool.leased + len(pool.free) < self.max_per_node:
                    pool.leased += 1
                    break
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise PoolExhausted(f"all {self.max_per_node} channels to {node_id} are in use")
                self._cond.wait(remaining)
        try:
            channel = self.connect(node)
        except BaseException:
            with self._cond:
                pool.leased -= 1
                self._cond.notify()
            raise
        with self._cond:
            pool.created += 1
        return channel

    def release_channel(self, node_id: str, channel) -> None:
        with self._cond:
            pool = self._node(node_id)
            pool.leased -= 1
            if self.pooled and not getattr(channel, "broken", False):
                pool.free.append(channel)
                channel = None
            else:
                pool.discarded += 1
            self._cond.notify()
        if channel is not None:
            channel.close()

    @contextmanager
    def lease(self, node_id: str) -> Iterator:
        channel = self.acquire_channel(node_id)
        try:
            yield channel
        finally:
            self.release_channel(node_id, channel)

    def stats(self) -> dict[str, dict]:
        with self._cond:
            return {
                nid: {
                    "created": p.created,
                    "reused": p.reused,
                    "discarded": p.discarded,
                    "leased": p.leased,
                    "free": len(p.free),
                }
                for nid, p in self._nodes.items()
            }

    def created(self) -> int:
        with self._cond:
            return sum(p.created for p in self._nodes.values())

    def close(self) -> None:
        with self._cond:
            channels = [c for p in self._nodes.values() for c in p.free]
            for p in self._nodes.values():
                p.free.clear()
        for c in channels:
            c.close()
