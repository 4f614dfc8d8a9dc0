"""Bindings between entities, including the cross-node relay chain.

When a publisher's exchange and a subscriber's queue live on different
federated nodes, a bind builds this chain::

    publisher node                         subscriber node
    exchange E --p--> @relay:E:<sub node> ==shovel==> mirror E --p--> queue S

The staging queue and its shovel are shared by every subscriber on the same
remote node, so the shovel count is bounded by (exchange, node) pairs. The
chain carries no bookkeeping of its own: unbind inspects the bindings left on
the mirror exchange to decide what can be torn down. The gateway and the
unbind daemon both go through :class:`BindingManager`.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional

from ..auth.cache import TTLCache
from ..broker.core import Binding
from ..errors import Conflict, NotFound
from ..router import NodeDescriptor, Router
from .pool import ChannelPool

STAGING_PREFIX = "@relay:"
STAGING_DEPTH = 1_000_000


def staging_queue(exchange: str, dest_node: str) -> str:
    return f"{STAGING_PREFIX}{exchange}:{dest_node}"


class BindingManager:
    def __init__(self, store, router: Router, pool: ChannelPool, owner_ttl: float = 60.0):
        self.store = store
        self.router = router
        self.pool = pool
        self._owners: TTLCache[str] = TTLCache(owner_ttl)
        # serialises chain edits per (exchange, subscriber node) inside one process
        self._locks: dict[tuple[str, str], threading.Lock] = {}
        self._locks_guard = threading.Lock()

    # -- placement --------------------------------------------------------

    def owner_of(self, entity_id: str) -> str:
        owner = self._owners.get(entity_id)
        if owner is None:
            owner = self.store.get_entity(entity_id).owner
            self._owners.put(entity_id, owner)
        return owner

    def node_for(self, entity_id: str) -> NodeDescriptor:
        """Node to send an operation on *entity_id* to (round-robin when clustered)."""
        return self.router.resolve_node(self.owner_of(entity_id))

    def home_of(self, entity_id: str) -> Optional[NodeDescriptor]:
        return self.router.home_node(self.owner_of(entity_id))

    def _lock(self, exchange: str, node_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault((exchange, node_id), threading.Lock())

    def _with(self, node_id: str, fn: Callable):
        with self.pool.lease(node_id) as channel:
            return fn(channel)

    # -- operations -------------------------------------------------------

    def bind(self, subscriber: str, exchange: str, pattern: str, expires_at: Optional[float] = None) -> None:
        pub_home = self.home_of(exchange)
        sub_home = self.home_of(subscriber)
        if pub_home is None or sub_home is None or pub_home.node_id == sub_home.node_id:
            node = sub_home or self.node_for(subscriber)
            self._with(node.node_id, lambda ch: ch.bind(exchange, subscriber, pattern, expires_at, as_=subscriber))
            return
        staging = staging_queue(exchange, sub_home.node_id)
        with self._lock(exchange, sub_home.node_id):
            # downstream first, so nothing is relayed into a missing mirror
            def downstream(ch):
                ch.declare_exchange(exchange)
                ch.bind(exchange, subscriber, pattern, expires_at, as_=subscriber)

            self._with(sub_home.node_id, downstream)

            def upstream(ch):
                ch.declare_queue(staging, STAGING_DEPTH)
                ch.bind(exchange, staging, pattern)
                if not any(s.source_queue == staging for s in ch.list_shovels()):
                    try:
                        ch.create_shovel(staging, sub_home.node_id, exchange)
                    except Conflict:
                        pass

            self._with(pub_home.node_id, upstream)

    def unbind(self, subscriber: str, exchange: str, pattern: str, as_subscriber: bool = True) -> None:
        """Remove one binding and whatever part of its relay chain nothing else uses."""
        as_ = subscriber if as_subscriber else None
        pub_home = self.home_of(exchange)
        sub_home = self.home_of(subscriber)
        if pub_home is None or sub_home is None or pub_home.node_id == sub_home.node_id:
            node = sub_home or self.node_for(subscriber)
            self._with(node.node_id, lambda ch: _unbind_quiet(ch, exchange, subscriber, pattern, as_))
            return
        staging = staging_queue(exchange, sub_home.node_id)
        with self._lock(exchange, sub_home.node_id):

            def downstream(ch):
                _unbind_quiet(ch, exchange, subscriber, pattern, as_)
                return ch.list_bindings(exchange=exchange)

            remaining = self._with(sub_home.node_id, downstream)
            if any(b.pattern == pattern for b in remaining):
                return

            def upstream(ch):
                _unbind_quiet(ch, exchange, staging, pattern, None)
                if remaining:
                    return
                for s in ch.list_shovels():
                    if s.source_queue == staging:
                        ch.delete_shovel(s.shovel_id)
                ch.delete_queue(staging)

            self._with(pub_home.node_id, upstream)
            if not remaining:
                self._with(sub_home.node_id, lambda ch: ch.delete_exchange(exchange))

    def bindings(self, subscriber: str, exchange: Optional[str] = None) -> list[Binding]:
        """Bindings delivering into *subscriber*'s queue, as seen on its node."""
        node = self.home_of(subscriber) or self.node_for(subscriber)
        return self._with(node.node_id, lambda ch: ch.list_bindings(exchange=exchange, queue=subscriber))


def _unbind_quiet(channel, exchange: str, queue: str, pattern: str, as_: Optional[str]) -> None:
    try:
        channel.unbind(exchange, queue, pattern, as_=as_)
    except NotFound:
        pass
