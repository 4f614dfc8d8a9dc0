"""In-memory broker state: exchanges, queues, bindings, shovels.

:class:`BrokerCore` is transport-free; :mod:`vermillion.broker.server` puts
it behind the framed wire protocol. Every public operation consults the auth
hook exactly once, before it mutates anything.

In clustered mode exchange, queue and binding metadata is replicated
synchronously to every peer, queues are homed on the node that declared them,
and publishes/consumes touching a queue homed elsewhere are forwarded to its
home node.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Protocol

from ..errors import AccessDenied, Conflict, InvalidArgument, NotFound, PayloadTooLarge
from ..principals import ARCHIVE_QUEUE, SYSTEM
from ..router import NodeDescriptor, RoutingMode
from .topics import matches, parse_pattern, validate_key

log = logging.getLogger(__name__)

MiB = 1024 * 1024


def now_ms() -> int:
    return int(time.time() * 1000)


@dataclass
class Message:
    exchange: str
    routing_key: str
    payload: bytes
    timestamp: int = 0
    publisher: str = ""


@dataclass(frozen=True)
class Binding:
    exchange: str
    queue: str
    pattern: str
    expires_at: Optional[float] = None

    def to_dict(self) -> dict:
        return {"exchange": self.exchange, "queue": self.queue, "pattern": self.pattern, "expires_at": self.expires_at}


@dataclass
class Shovel:
    shovel_id: str
    source_node: str
    source_queue: str
    dest_node: str
    dest_exchange: str
    active: bool = True
    relayed: int = 0
    failures: int = 0

    def to_dict(self) -> dict:
        return {
            "shovel_id": self.shovel_id,
            "source_node": self.source_node,
            "source_queue": self.source_queue,
            "dest_node": self.dest_node,
            "dest_exchange": self.dest_exchange,
            "active": self.active,
            "relayed": self.relayed,
            "failures": self.failures,
        }


class Queue:
    """Bounded FIFO; overflow drops the oldest message and counts it."""

    def __init__(self, name: str, depth_limit: int, home_node: str):
        if depth_limit < 1:
            raise InvalidArgument("depth_limit must be positive")
        self.name = name
        self.depth_limit = depth_limit
        self.home_node = home_node
        self.dropped = 0
        self.enqueued = 0
        self._buf: deque[Message] = deque()
        self._lock = threading.Lock()

    def push(self, messages: Iterable[Message]) -> None:
        with self._lock:
            buf = self._buf
            for m in messages:
                if len(buf) >= self.depth_limit:
                    buf.popleft()
                    self.dropped += 1
                buf.append(m)
                self.enqueued += 1

    def pop(self, n: int) -> list[Message]:
        with self._lock:
            k = min(n, len(self._buf))
            return [self._buf.popleft() for _ in range(k)]

    def peek(self, n: int) -> list[Message]:
        with self._lock:
            k = min(n, len(self._buf))
            return [self._buf[i] for i in range(k)]

    def drop_front(self, n: int) -> None:
        with self._lock:
            for _ in range(min(n, len(self._buf))):
                self._buf.popleft()

    def __len__(self) -> int:
        return len(self._buf)

    def stats(self) -> dict:
        return {
            "name": self.name,
            "depth": len(self._buf),
            "depth_limit": self.depth_limit,
            "dropped": self.dropped,
            "enqueued": self.enqueued,
            "home_node": self.home_node,
        }


class AuthHook(Protocol):
    def authorize(self, principal: str, action: str, resource: str, pattern: Optional[str] = None) -> bool: ...

    def authenticate(self, apikey: str) -> Optional[str]: ...


class AllowAll:
    """Hook that permits everything; for standalone brokers and tests."""

    def authorize(self, principal, action, resource, pattern=None):
        return True

    def authenticate(self, apikey):
        return None


@dataclass
class BrokerConfig:
    node_id: str
    host: str = "127.0.0.1"
    port: int = 0
    mode: RoutingMode = RoutingMode.FEDERATED
    peers: list[NodeDescriptor] = field(default_factory=list)
    secret: str = ""
    depth_limit: int = 10_000
    max_payload: int = MiB
    archive_limit: int = 1_000_000
    shovel_batch: int = 100
    shovel_idle: float = 0.01
    shovel_max_failures: int = 5
    shovel_backoff: float = 0.05
    peer_timeout: float = 2.0

    @classmethod
    def from_dict(cls, doc: dict) -> "BrokerConfig":
        doc = dict(doc)
        doc["mode"] = RoutingMode.parse(doc.get("mode", "federated"))
        doc["peers"] = [
            NodeDescriptor(str(p["node_id"]), p.get("host", "127.0.0.1"), int(p["port"]), int(p.get("bucket", 0)))
            for p in doc.get("peers", [])
        ]
        return cls(**doc)


class BrokerCore:
    def __init__(self, config: BrokerConfig, hook: Optional[AuthHook] = None, peers=None):
        self.config = config
        self.node_id = config.node_id
        self.hook: AuthHook = hook or AllowAll()
        self.clustered = config.mode is RoutingMode.CLUSTERED
        # PeerLinks; set by the server once the node's own address is known
        self.peers = peers
        self._meta = threading.RLock()
        self.exchanges: dict[str, dict[tuple[str, str], Binding]] = {}
        self.queues: dict[str, Queue] = {}
        # name -> (home node, depth limit); covers remote queues in clustered mode
        self.queue_homes: dict[str, tuple[str, int]] = {}
        self.shovels: dict[str, Shovel] = {}
        self._relays: dict[str, object] = {}
        self.relay_factory: Optional[Callable[["BrokerCore", Shovel], object]] = None
        self.archive = Queue(ARCHIVE_QUEUE, config.archive_limit, self.node_id)

    # -- auth -------------------------------------------------------------

    def _authorize(self, principal: str, action: str, resource: str, pattern: Optional[str] = None) -> None:
        if not self.hook.authorize(principal, action, resource, pattern):
            raise AccessDenied(f"{principal} may not {action} {resource}")

    # -- declarations -----------------------------------------------------

    def declare_exchange(self, name: str, principal: str = SYSTEM) -> None:
        self._authorize(principal, "declare", name)
        self._check_name(name)
        with self._meta:
            if name in self.exchanges:
                return
            self.exchanges[name] = {}
        self._replicate({"op": "declare_exchange", "name": name}, rollback=lambda: self._drop_exchange(name))

    def declare_queue(self, name: str, depth_limit: Optional[int] = None, principal: str = SYSTEM) -> None:
        self._authorize(principal, "declare", name)
        self._check_name(name)
        limit = depth_limit or self.config.depth_limit
        with self._meta:
            existing = self.queue_homes.get(name)
            if existing is not None:
                if existing[1] != limit:
                    raise Conflict(f"queue {name} exists with depth_limit {existing[1]}")
                return
            self.queues[name] = Queue(name, limit, self.node_id)
            self.queue_homes[name] = (self.node_id, limit)
        self._replicate(
            {"op": "declare_queue", "name": name, "home": self.node_id, "depth_limit": limit},
            rollback=lambda: self._drop_queue(name),
        )

    def delete_exchange(self, name: str, principal: str = SYSTEM) -> None:
        self._authorize(principal, "delete", name)
        with self._meta:
            saved = self.exchanges.get(name)
            if saved is None:
                return
            self._drop_exchange(name)
        self._replicate({"op": "delete_exchange", "name": name}, rollback=lambda: self._restore_exchange(name, saved))

    def delete_queue(self, name: str, principal: str = SYSTEM) -> None:
        self._authorize(principal, "delete", name)
        if name == ARCHIVE_QUEUE:
            raise InvalidArgument("the archive queue cannot be deleted")
        with self._meta:
            if name not in self.queue_homes:
                return
            home = self.queue_homes[name]
            queue = self.queues.get(name)
            bindings = [b for ex in self.exchanges.values() for b in ex.values() if b.queue == name]
            self._drop_queue(name)

        def rollback():
            with self._meta:
                self.queue_homes[name] = home
                if queue is not None:
                    self.queues[name] = queue
                for b in bindings:
                    self.exchanges.setdefault(b.exchange, {})[(b.queue, b.pattern)] = b

        self._replicate({"op": "delete_queue", "name": name}, rollback=rollback)

    # -- bindings ---------------------------------------------------------

    def bind(
        self,
        exchange: str,
        queue: str,
        pattern: str,
        expires_at: Optional[float] = None,
        principal: str = SYSTEM,
    ) -> None:
        self._authorize(principal, "bind", exchange, pattern)
        parse_pattern(pattern)
        binding = Binding(exchange, queue, pattern, expires_at)
        with self._meta:
            table = self.exchanges.get(exchange)
            if table is None:
                raise NotFound(f"exchange {exchange} not found")
            if queue not in self.queue_homes:
                raise NotFound(f"queue {queue} not found")
            key = (queue, pattern)
            previous = table.get(key)
            if previous == binding:
                return
            table[key] = binding

        def rollback():
            with self._meta:
                t = self.exchanges.get(exchange)
                if t is None:
                    return
                if previous is None:
                    t.pop(key, None)
                else:
                    t[key] = previous

        self._replicate({"op": "bind", **binding.to_dict()}, rollback=rollback)

    def unbind(self, exchange: str, queue: str, pattern: str, principal: str = SYSTEM) -> None:
        self._authorize(principal, "unbind", exchange, pattern)
        with self._meta:
            table = self.exchanges.get(exchange)
            if table is None:
                raise NotFound(f"exchange {exchange} not found")
            previous = table.pop((queue, pattern), None)
            if previous is None:
                return

        def rollback():
            with self._meta:
                self.exchanges.get(exchange, {})[(queue, pattern)] = previous

        self._replicate({"op": "unbind", "exchange": exchange, "queue": queue, "pattern": pattern}, rollback=rollback)

    # -- data path --------------------------------------------------------

    def publish(self, message: Message, principal: str = SYSTEM, relayed: bool = False) -> int:
        """Route *message* into every queue with a matching binding.

        Returns the number of queues it was delivered to. Relayed messages
        (arriving over a shovel) are not copied to the archive queue; the
        originating node already archived them.
        """
        self._authorize(principal, "publish", message.exchange)
        return self._route([message], relayed)

    def publish_batch(self, messages: list[Message], principal: str = SYSTEM, relayed: bool = False) -> int:
        exchanges = {m.exchange for m in messages}
        if len(exchanges) > 1:
            raise InvalidArgument("a batch must target a single exchange")
        if not messages:
            self._authorize(principal, "publish", "")
            return 0
        self._authorize(principal, "publish", exchanges.pop())
        return self._route(messages, relayed)

    def _route(self, messages: list[Message], relayed: bool) -> int:
        limit = self.config.max_payload
        for m in messages:
            if len(m.payload) > limit:
                raise PayloadTooLarge(f"payload of {len(m.payload)} bytes exceeds {limit}")
            validate_key(m.routing_key)
            if not m.timestamp:
                m.timestamp = now_ms()
        exchange = messages[0].exchange
        local: dict[str, list[Message]] = {}
        remote: dict[tuple[str, str], list[Message]] = {}
        with self._meta:
            table = self.exchanges.get(exchange)
            if table is None:
                raise NotFound(f"exchange {exchange} not found")
            bindings = list(table.values())
            for m in messages:
                targets = {b.queue for b in bindings if matches(b.pattern, m.routing_key)}
                for q in targets:
                    home = self.queue_homes.get(q)
                    if home is None:
                        continue
                    if home[0] == self.node_id:
                        local.setdefault(q, []).append(m)
                    else:
                        remote.setdefault((home[0], q), []).append(m)
            queues = {q: self.queues[q] for q in local if q in self.queues}
        delivered = 0
        for q, msgs in local.items():
            if q in queues:
                queues[q].push(msgs)
                delivered += len(msgs)
        for (node, q), msgs in remote.items():
            self.peers.enqueue(node, q, msgs)
            delivered += len(msgs)
        if not relayed:
            self.archive.push(messages)
        return delivered

    def enqueue(self, queue: str, messages: list[Message], principal: str = SYSTEM) -> None:
        """Append already-routed messages to a local queue (clustered forwarding)."""
        self._authorize(principal, "enqueue", queue)
        q = self.queues.get(queue)
        if q is None:
            raise NotFound(f"queue {queue} is not homed on {self.node_id}")
        q.push(messages)

    def consume(self, queue: str, max_messages: int, principal: str = SYSTEM) -> list[Message]:
        self._authorize(principal, "consume", queue)
        if max_messages < 0:
            raise InvalidArgument("max_messages must be >= 0")
        if queue == ARCHIVE_QUEUE:
            return self.archive.pop(max_messages)
        q = self.queues.get(queue)
        if q is not None:
            return q.pop(max_messages)
        home = self.queue_homes.get(queue)
        if home is None:
            raise NotFound(f"queue {queue} not found")
        return self.peers.consume(home[0], queue, max_messages, principal)

    def _local(self, queue: str) -> Queue:
        if queue == ARCHIVE_QUEUE:
            return self.archive
        q = self.queues.get(queue)
        if q is None:
            raise NotFound(f"queue {queue} is not homed on {self.node_id}")
        return q

    def peek(self, queue: str, max_messages: int, principal: str = SYSTEM) -> list[Message]:
        """Read up to *max_messages* from the front of a local queue without removing them.

        Together with :meth:`ack` this gives a single drainer at-least-once
        delivery: a crash between the two leaves the messages in place.
        """
        self._authorize(principal, "drain", queue)
        if max_messages < 0:
            raise InvalidArgument("max_messages must be >= 0")
        return self._local(queue).peek(max_messages)

    def ack(self, queue: str, count: int, principal: str = SYSTEM) -> None:
        """Remove *count* messages previously returned by :meth:`peek`."""
        self._authorize(principal, "drain", queue)
        self._local(queue).drop_front(count)

    # -- shovels ----------------------------------------------------------

    def create_shovel(
        self, source_queue: str, dest_node: str, dest_exchange: str, principal: str = SYSTEM
    ) -> str:
        self._authorize(principal, "shovel", source_queue)
        if dest_node == self.node_id:
            raise InvalidArgument("shovel source and destination must be different nodes")
        with self._meta:
            if source_queue not in self.queues:
                raise NotFound(f"queue {source_queue} not found on {self.node_id}")
            for s in self.shovels.values():
                if s.source_queue == source_queue and s.dest_exchange == dest_exchange:
                    raise Conflict(f"shovel {s.shovel_id} already relays {source_queue} -> {dest_exchange}")
            shovel_id = f"{self.node_id}:{source_queue}->{dest_node}:{dest_exchange}"
            shovel = Shovel(shovel_id, self.node_id, source_queue, dest_node, dest_exchange)
            self.shovels[shovel_id] = shovel
        if self.relay_factory is not None:
            relay = self.relay_factory(self, shovel)
            self._relays[shovel_id] = relay
            relay.start()
        return shovel_id

    def delete_shovel(self, shovel_id: str, principal: str = SYSTEM) -> None:
        self._authorize(principal, "shovel", shovel_id)
        with self._meta:
            shovel = self.shovels.pop(shovel_id, None)
        relay = self._relays.pop(shovel_id, None)
        if relay is not None:
            relay.stop()
        if shovel is not None:
            shovel.active = False

    # -- introspection ----------------------------------------------------

    def list_exchanges(self, principal: str = SYSTEM) -> list[str]:
        self._authorize(principal, "inspect", "exchanges")
        with self._meta:
            return sorted(self.exchanges)

    def list_queues(self, principal: str = SYSTEM) -> list[dict]:
        self._authorize(principal, "inspect", "queues")
        with self._meta:
            return [
                {"name": n, "home_node": h, "depth_limit": lim, "local": n in self.queues}
                for n, (h, lim) in sorted(self.queue_homes.items())
            ]

    def list_bindings(
        self, exchange: Optional[str] = None, queue: Optional[str] = None, principal: str = SYSTEM
    ) -> list[Binding]:
        self._authorize(principal, "inspect", "bindings")
        with self._meta:
            out = [
                b
                for name, table in self.exchanges.items()
                if exchange is None or name == exchange
                for b in table.values()
                if queue is None or b.queue == queue
            ]
        return sorted(out, key=lambda b: (b.exchange, b.queue, b.pattern))

    def list_shovels(self, principal: str = SYSTEM) -> list[Shovel]:
        self._authorize(principal, "inspect", "shovels")
        with self._meta:
            return sorted(self.shovels.values(), key=lambda s: s.shovel_id)

    def queue_stats(self, name: str, principal: str = SYSTEM) -> dict:
        self._authorize(principal, "inspect", name)
        if name == ARCHIVE_QUEUE:
            return self.archive.stats()
        q = self.queues.get(name)
        if q is not None:
            return q.stats()
        home = self.queue_homes.get(name)
        if home is None:
            raise NotFound(f"queue {name} not found")
        return self.peers.queue_stats(home[0], name)

    # -- clustered replication --------------------------------------------

    def apply_replication(self, event: dict, principal: str = SYSTEM) -> None:
        """Apply a metadata change received from a peer, without re-broadcasting."""
        self._authorize(principal, "replicate", event.get("op", ""))
        op = event["op"]
        with self._meta:
            if op == "declare_exchange":
                self.exchanges.setdefault(event["name"], {})
            elif op == "delete_exchange":
                self._drop_exchange(event["name"])
            elif op == "declare_queue":
                self.queue_homes.setdefault(event["name"], (event["home"], int(event["depth_limit"])))
            elif op == "delete_queue":
                self._drop_queue(event["name"])
            elif op == "bind":
                b = Binding(event["exchange"], event["queue"], event["pattern"], event.get("expires_at"))
                self.exchanges.setdefault(b.exchange, {})[(b.queue, b.pattern)] = b
            elif op == "unbind":
                self.exchanges.get(event["exchange"], {}).pop((event["queue"], event["pattern"]), None)
            else:
                raise InvalidArgument(f"unknown replication op {op!r}")

    def _replicate(self, event: dict, rollback: Callable[[], None]) -> None:
        if not self.clustered or self.peers is None:
            return
        try:
            self.peers.broadcast(event)
        except Exception:
            log.warning("replication of %s failed on %s; rolling back", event.get("op"), self.node_id)
            with self._meta:
                rollback()
            raise

    # -- helpers ----------------------------------------------------------

    def _check_name(self, name: str) -> None:
        if not name or any(c.isspace() for c in name):
            raise InvalidArgument(f"invalid resource name {name!r}")
        if name == ARCHIVE_QUEUE:
            raise Conflict("'archive' is reserved")

    def _drop_exchange(self, name: str) -> None:
        with self._meta:
            self.exchanges.pop(name, None)

    def _restore_exchange(self, name: str, table: dict) -> None:
        with self._meta:
            self.exchanges[name] = table

    def _drop_queue(self, name: str) -> None:
        with self._meta:
            self.queues.pop(name, None)
            self.queue_homes.pop(name, None)
            for table in self.exchanges.values():
                for key in [k for k in table if k[0] == name]:
                    del table[key]

    def close(self) -> None:
        for shovel_id in list(self._relays):
            self._relays.pop(shovel_id).stop()
