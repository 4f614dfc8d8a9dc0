"""REST request handling, independent of the HTTP transport.

A :class:`Gateway` keeps no per-request state: everything it knows lives in
the auth store and the broker fleet. Its caches only memoise facts that do
not change (who a key belongs to, who owns an entity) or that the broker
re-checks anyway, so any number of replicas behave the same.
"""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from ..auth.cache import TTLCache
from ..auth.keys import cache_token
from ..auth.store import Decision, EntityKind, Principal, Role
from ..broker.client import BrokerClient
from ..broker.core import MiB, now_ms
from ..errors import (
    AccessDenied,
    InvalidArgument,
    NotFound,
    PayloadTooLarge,
    Unauthenticated,
    VermillionError,
)
from ..router import NodeDescriptor, Router
from .catalogue import search
from .pool import ChannelPool
from .relay import BindingManager

log = logging.getLogger(__name__)

DEFAULT_ROUTING_KEY = "data"


@dataclass
class ApiRequest:
    method: str
    path: str
    apikey: Optional[str] = None
    body: Optional[dict] = None
    query: dict[str, str] = field(default_factory=dict)


@dataclass
class ApiResponse:
    status: int
    body: dict


@dataclass
class GatewayConfig:
    broker_secret: str = ""
    pooled: bool = True
    max_per_node: int = 16
    pool_timeout: float = 5.0
    auth_ttl: float = 60.0
    permission_ttl: float = 5.0
    max_payload: int = MiB
    subscribe_default: int = 100
    subscribe_limit: int = 10_000
    queue_depth: Optional[int] = None
    broker_timeout: float = 10.0


class Gateway:
    def __init__(self, store, router: Router, config: Optional[GatewayConfig] = None):
        self.store = store
        self.router = router
        self.config = config or GatewayConfig()
        self.pool = ChannelPool(
            self._connect,
            router.registry.get,
            max_per_node=self.config.max_per_node,
            timeout=self.config.pool_timeout,
            pooled=self.config.pooled,
        )
        self.bindings = BindingManager(store, router, self.pool)
        self._principals: TTLCache[Principal] = TTLCache(self.config.auth_ttl)
        self._allowed: TTLCache[bool] = TTLCache(self.config.permission_ttl)
        self._routes: dict[tuple[str, str], Callable[[ApiRequest], tuple[int, dict]]] = {
            ("POST", "/admin/register-provider"): self.register_provider,
            ("POST", "/owner/register-entity"): self.register_entity,
            ("POST", "/entity/publish"): self.publish,
            ("GET", "/entity/subscribe"): self.subscribe,
            ("GET", "/cat"): self.catalogue,
            ("POST", "/entity/follow"): self.follow,
            ("GET", "/entity/follow-status"): self.follow_status,
            ("GET", "/entity/follow-requests"): self.follow_requests,
            ("POST", "/entity/share"): self.share,
            ("POST", "/entity/reject-follow"): self.reject_follow,
            ("POST", "/entity/bind"): self.bind,
            ("POST", "/entity/unbind"): self.unbind,
            ("GET", "/stats"): self.stats,
        }

    def _connect(self, node: NodeDescriptor) -> BrokerClient:
        return BrokerClient(
            node.host, node.port, secret=self.config.broker_secret, timeout=self.config.broker_timeout, node_id=node.node_id
        )

    def close(self) -> None:
        self.pool.close()

    # -- dispatch ---------------------------------------------------------

    def handle(self, request: ApiRequest) -> ApiResponse:
        handler = self._routes.get((request.method, request.path))
        if handler is None:
            if any(path == request.path for _, path in self._routes):
                return ApiResponse(405, {"error": "method-not-allowed", "message": request.method})
            return ApiResponse(404, {"error": "not-found", "message": f"no endpoint {request.path}"})
        try:
            status, body = handler(request)
        except VermillionError as exc:
            return ApiResponse(exc.status, {"error": exc.kind, "message": str(exc)})
        except Exception:
            log.exception("unhandled error in %s %s", request.method, request.path)
            return ApiResponse(500, {"error": "internal", "message": "internal error"})
        return ApiResponse(status, body)

    # -- helpers ----------------------------------------------------------

    def _principal(self, request: ApiRequest, role: Role, kind: Optional[EntityKind] = None) -> Principal:
        if not request.apikey:
            raise Unauthenticated("missing apikey header")
        token = cache_token(request.apikey)
        principal = self._principals.get(token)
        if principal is None:
            principal = self.store.authenticate(request.apikey)
            if principal is None:
                raise Unauthenticated("unknown apikey")
            self._principals.put(token, principal)
        if principal.role is not role or (kind is not None and principal.kind is not kind):
            raise AccessDenied(f"{principal.id} is not a {(kind or role).value}")
        return principal

    def _check(self, principal: Principal, resource: str, action: str) -> None:
        key = (principal.id, resource, action)
        if self._allowed.get(key):
            return
        if self.store.check_permission(principal.id, resource, action) is not Decision.ALLOW:
            raise AccessDenied(f"{principal.id} may not {action} {resource}")
        self._allowed.put(key, True)

    @staticmethod
    def _field(request: ApiRequest, name: str, default: Any = ..., kind: type = str) -> Any:
        body = request.body or {}
        if name not in body or body[name] is None:
            if default is ...:
                raise InvalidArgument(f"missing field {name!r}")
            return default
        value = body[name]
        if kind is int and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise InvalidArgument(f"field {name!r} must be a number")
        if kind is str and not isinstance(value, str):
            raise InvalidArgument(f"field {name!r} must be a string")
        return value

    @staticmethod
    def _query(request: ApiRequest, name: str, default: Optional[str] = None) -> str:
        value = request.query.get(name, default)
        if value is None:
            raise InvalidArgument(f"missing query parameter {name!r}")
        return value

    def _lease(self, node: NodeDescriptor):
        return self.pool.lease(node.node_id)

    # -- endpoints --------------------------------------------------------

    def register_provider(self, request: ApiRequest) -> tuple[int, dict]:
        if not request.apikey:
            raise Unauthenticated("missing apikey header")
        provider_id = self._field(request, "provider_id")
        apikey = self.store.register_provider(request.apikey, provider_id)
        return 201, {"provider_id": provider_id, "apikey": apikey}

    def register_entity(self, request: ApiRequest) -> tuple[int, dict]:
        owner = self._principal(request, Role.PROVIDER)
        entity_id = self._field(request, "entity_id")
        kind = self._field(request, "kind")
        item = (request.body or {}).get("catalogue_item")
        apikey = self.store.register_entity(owner, entity_id, kind, item)
        node = self.router.resolve_node(owner.id)
        try:
            with self._lease(node) as ch:
                if EntityKind(kind) is EntityKind.PUBLISHER:
                    ch.declare_exchange(entity_id, as_=owner.id)
                else:
                    ch.declare_queue(entity_id, self.config.queue_depth, as_=owner.id)
        except Exception:
            self.store.remove_entity(entity_id)
            raise
        return 201, {"entity_id": entity_id, "apikey": apikey, "node": node.node_id}

    def publish(self, request: ApiRequest) -> tuple[int, dict]:
        pub = self._principal(request, Role.ENTITY, EntityKind.PUBLISHER)
        if request.body is None or "data" not in request.body:
            raise InvalidArgument("missing field 'data'")
        routing_key = self._field(request, "routing_key", DEFAULT_ROUTING_KEY)
        payload = json.dumps(request.body["data"], separators=(",", ":")).encode()
        if len(payload) > self.config.max_payload:
            raise PayloadTooLarge(f"payload of {len(payload)} bytes exceeds {self.config.max_payload}")
        self._check(pub, pub.id, "publish")
        node = self.router.resolve_node(pub.owner)
        with self._lease(node) as ch:
            ch.publish(pub.id, routing_key, payload, publisher=pub.id, timestamp=now_ms(), as_=pub.id)
        return 200, {"status": "published"}

    def subscribe(self, request: ApiRequest) -> tuple[int, dict]:
        sub = self._principal(request, Role.ENTITY, EntityKind.SUBSCRIBER)
        try:
            n = int(self._query(request, "max_messages", str(self.config.subscribe_default)))
        except ValueError:
            raise InvalidArgument("max_messages must be an integer") from None
        if not 0 < n <= self.config.subscribe_limit:
            raise InvalidArgument(f"max_messages must be in [1, {self.config.subscribe_limit}]")
        self._check(sub, sub.id, "consume")
        node = self.router.resolve_node(sub.owner)
        with self._lease(node) as ch:
            messages = ch.consume(sub.id, n, as_=sub.id)
        return 200, {"messages": [_render(m) for m in messages]}

    def catalogue(self, request: ApiRequest) -> tuple[int, dict]:
        entries = [e.public() for e in self.store.list_entities()]
        return 200, {"items": search(entries, request.query)}

    def follow(self, request: ApiRequest) -> tuple[int, dict]:
        sub = self._principal(request, Role.ENTITY, EntityKind.SUBSCRIBER)
        target = self._field(request, "entity_id")
        pattern = self._field(request, "pattern", "#")
        follow_id = self.store.create_follow(sub, target, pattern)
        return 201, {"follow_id": follow_id}

    def follow_status(self, request: ApiRequest) -> tuple[int, dict]:
        sub = self._principal(request, Role.ENTITY, EntityKind.SUBSCRIBER)
        follow_id = self._query(request, "follow_id")
        status = self.store.follow_status(sub, follow_id)
        return 200, {"follow_id": follow_id, "status": status.value}

    def follow_requests(self, request: ApiRequest) -> tuple[int, dict]:
        provider = self._principal(request, Role.PROVIDER)
        return 200, {"requests": self.store.list_follow_requests(provider)}

    def share(self, request: ApiRequest) -> tuple[int, dict]:
        provider = self._principal(request, Role.PROVIDER)
        follow_id = self._field(request, "follow_id")
        validity = self._field(request, "validity_seconds", None, int)
        record = self.store.approve_follow(provider, follow_id, validity)
        return 200, {"follow_id": follow_id, "status": "approved", "expires_at": record.expires_at}

    def reject_follow(self, request: ApiRequest) -> tuple[int, dict]:
        provider = self._principal(request, Role.PROVIDER)
        follow_id = self._field(request, "follow_id")
        self.store.reject_follow(provider, follow_id)
        return 200, {"follow_id": follow_id, "status": "rejected"}

    def _target(self, request: ApiRequest) -> tuple[str, str]:
        target = self._field(request, "entity_id")
        pattern = self._field(request, "pattern", "#")
        if self.store.get_entity(target).kind is not EntityKind.PUBLISHER:
            raise InvalidArgument(f"{target!r} is not a publisher")
        return target, pattern

    def bind(self, request: ApiRequest) -> tuple[int, dict]:
        sub = self._principal(request, Role.ENTITY, EntityKind.SUBSCRIBER)
        target, pattern = self._target(request)
        permission = self.store.covering_permission(sub.id, target, pattern)
        if permission is None:
            raise AccessDenied(f"{sub.id} has no approved access to {target} for {pattern!r}")
        self.bindings.bind(sub.id, target, pattern, permission.expires_at)
        return 200, {"entity_id": target, "pattern": pattern, "expires_at": permission.expires_at}

    def unbind(self, request: ApiRequest) -> tuple[int, dict]:
        sub = self._principal(request, Role.ENTITY, EntityKind.SUBSCRIBER)
        target, pattern = self._target(request)
        if not any(b.pattern == pattern for b in self.bindings.bindings(sub.id, target)):
            raise NotFound(f"{sub.id} is not bound to {target} with {pattern!r}")
        self.bindings.unbind(sub.id, target, pattern)
        return 200, {"entity_id": target, "pattern": pattern, "status": "unbound"}

    def stats(self, request: ApiRequest) -> tuple[int, dict]:
        return 200, {"pooled": self.config.pooled, "max_per_node": self.config.max_per_node, "pool": self.pool.stats()}


def _render(message) -> dict:
    try:
        data = json.loads(message.payload)
        out = {"data": data}
    except (UnicodeDecodeError, ValueError):
        out = {"data_b64": base64.b64encode(message.payload).decode()}
    return {"from": message.exchange, "routing_key": message.routing_key, "timestamp": message.timestamp, **out}
