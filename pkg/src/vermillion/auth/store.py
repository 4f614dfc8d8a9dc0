"""Providers, entities, follow requests and time-limited permissions.

One table per record type, each keyed for single-record reads. Raw API keys
are returned once at registration and never stored: records keep a salted
PBKDF2 digest plus a short SHA-256 fingerprint used to locate the record.

When ``data_dir`` is set every mutation rewrites that table's snapshot file
(``providers.json``, ``entities.json``, ``follows.json``,
``permissions.json``), each ``{"version": 1, "type": ..., "records": [...]}``.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import tempfile
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Union

from ..broker.topics import covers, parse_pattern
from ..errors import AccessDenied, Conflict, InvalidArgument, NotFound, Unauthenticated
from ..principals import ARCHIVE_QUEUE
from .cache import TTLCache
from .keys import DEFAULT_ITERATIONS, cache_token, generate_key, hash_key, key_fingerprint, verify_key

log = logging.getLogger(__name__)

ADMIN_ENV = "VERMILLION_ADMIN_KEY"
ADMIN_ID = "admin"
SNAPSHOT_VERSION = 1
DEFAULT_VALIDITY = 7 * 24 * 3600
RESERVED_IDS = {ADMIN_ID, ARCHIVE_QUEUE}


class Role(str, enum.Enum):
    ADMIN = "admin"
    PROVIDER = "provider"
    ENTITY = "entity"


class EntityKind(str, enum.Enum):
    PUBLISHER = "publisher"
    SUBSCRIBER = "subscriber"


class FollowStatus(str, enum.Enum):
    PENDING = "pending"
    APPROVED = "approved"
    REJECTED = "rejected"


class Decision(str, enum.Enum):
    ALLOW = "allow"
    DENY = "deny"


@dataclass(frozen=True)
class Principal:
    id: str
    role: Role
    kind: Optional[EntityKind] = None
    owner: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "role": self.role.value,
            "kind": self.kind.value if self.kind else None,
            "owner": self.owner,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Principal":
        return cls(d["id"], Role(d["role"]), EntityKind(d["kind"]) if d.get("kind") else None, d.get("owner"))


@dataclass
class ProviderRecord:
    provider_id: str
    api_key_hash: str
    key_id: str
    created_at: float


@dataclass
class EntityRecord:
    entity_id: str
    owner: str
    kind: EntityKind
    api_key_hash: str
    key_id: str
    catalogue_item: dict = field(default_factory=dict)
    created_at: float = 0.0

    def public(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "owner": self.owner,
            "kind": self.kind.value,
            "catalogue_item": self.catalogue_item,
        }


@dataclass
class FollowRequest:
    follow_id: str
    subscriber_id: str
    target_entity: str
    requested_pattern: str
    status: FollowStatus = FollowStatus.PENDING
    validity_seconds: Optional[int] = None
    created_at: float = 0.0
    decided_at: Optional[float] = None


@dataclass
class PermissionRecord:
    follow_id: str
    subscriber_id: str
    target_entity: str
    routing_pattern: str
    expires_at: float


Credential = Union[str, Principal]


class AuthStore:
    def __init__(
        self,
        admin_key: Optional[str] = None,
        data_dir: Union[str, Path, None] = None,
        clock: Callable[[], float] = time.time,
        hash_iterations: int = DEFAULT_ITERATIONS,
        key_bytes: int = 32,
        default_validity: int = DEFAULT_VALIDITY,
        auth_cache_ttl: float = 60.0,
    ):
        admin_key = admin_key if admin_key is not None else os.environ.get(ADMIN_ENV)
        self._admin_token = cache_token(admin_key) if admin_key else None
        self.data_dir = Path(data_dir) if data_dir else None
        self.clock = clock
        self.hash_iterations = hash_iterations
        self.key_bytes = key_bytes
        self.default_validity = default_validity
        self._lock = threading.RLock()
        self.providers: dict[str, ProviderRecord] = {}
        self.entities: dict[str, EntityRecord] = {}
        self.follows: dict[str, FollowRequest] = {}
        # (subscriber, target) -> {follow_id: record}
        self.permissions: dict[tuple[str, str], dict[str, PermissionRecord]] = {}
        self._by_key_id: dict[str, str] = {}
        # verified keys, indexed by a digest of the key, never the key itself
        self._verified: TTLCache[Principal] = TTLCache(auth_cache_ttl)
        if self.data_dir:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            self._load()

    # -- identity ---------------------------------------------------------

    def authenticate(self, api_key: Optional[str]) -> Optional[Principal]:
        if not api_key:
            return None
        token = cache_token(api_key)
        if self._admin_token is not None and token == self._admin_token:
            return Principal(ADMIN_ID, Role.ADMIN)
        cached = self._verified.get(token)
        if cached is not None:
            return cached
        with self._lock:
            record_id = self._by_key_id.get(key_fingerprint(api_key))
            record: Any = None
            if record_id is not None:
                record = self.entities.get(record_id) or self.providers.get(record_id)
        if record is None or not verify_key(api_key, record.api_key_hash):
            return None
        if isinstance(record, ProviderRecord):
            principal = Principal(record.provider_id, Role.PROVIDER)
        else:
            principal = Principal(record.entity_id, Role.ENTITY, record.kind, record.owner)
        self._verified.put(token, principal)
        return principal

    def _require(self, credential: Credential, role: Role, kind: Optional[EntityKind] = None) -> Principal:
        principal = credential if isinstance(credential, Principal) else self.authenticate(credential)
        if principal is None:
            raise Unauthenticated("unknown API key")
        if principal.role is not role or (kind is not None and principal.kind is not kind):
            wanted = kind.value if kind else role.value
            raise AccessDenied(f"{principal.id} is not a {wanted}")
        return principal

    def _new_key(self) -> tuple[str, str, str]:
        key = generate_key(self.key_bytes)
        return key, hash_key(key, self.hash_iterations), key_fingerprint(key)

    # -- registration -----------------------------------------------------

    def register_provider(self, admin_credential: Credential, provider_id: str) -> str:
        self._require(admin_credential, Role.ADMIN)
        _check_id(provider_id)
        key, digest, key_id = self._new_key()
        with self._lock:
            if provider_id in self.providers or provider_id in self.entities:
                raise Conflict(f"id {provider_id!r} already registered")
            self.providers[provider_id] = ProviderRecord(provider_id, digest, key_id, self.clock())
            self._by_key_id[key_id] = provider_id
            self._save("providers")
        return key

    def register_entity(
        self,
        owner_credential: Credential,
        entity_id: str,
        kind: Union[EntityKind, str],
        catalogue_item: Any = None,
    ) -> str:
        owner = self._require(owner_credential, Role.PROVIDER)
        _check_id(entity_id)
        try:
            kind = EntityKind(kind)
        except ValueError:
            raise InvalidArgument(f"kind must be publisher or subscriber, got {kind!r}") from None
        if catalogue_item is None:
            catalogue_item = {}
        if isinstance(catalogue_item, str):
            try:
                catalogue_item = json.loads(catalogue_item)
            except json.JSONDecodeError as exc:
                raise InvalidArgument(f"catalogue item is not valid JSON: {exc}") from None
        if not isinstance(catalogue_item, dict):
            raise InvalidArgument("catalogue item must be a JSON object")
        key, digest, key_id = self._new_key()
        with self._lock:
            if entity_id in self.entities or entity_id in self.providers:
                raise Conflict(f"id {entity_id!r} already registered")
            self.entities[entity_id] = EntityRecord(
                entity_id, owner.id, kind, digest, key_id, catalogue_item, self.clock()
            )
            self._by_key_id[key_id] = entity_id
            self._save("entities")
        return key

    def remove_entity(self, entity_id: str) -> None:
        with self._lock:
            record = self.entities.pop(entity_id, None)
            if record is None:
                return
            self._by_key_id.pop(record.key_id, None)
            self._save("entities")
        self._verified.clear()

    def get_entity(self, entity_id: str) -> EntityRecord:
        with self._lock:
            record = self.entities.get(entity_id)
        if record is None:
            raise NotFound(f"entity {entity_id!r} not found")
        return record

    def list_entities(self) -> list[EntityRecord]:
        with self._lock:
            return list(self.entities.values())

    # -- authorisation ----------------------------------------------------

    def check_permission(
        self, principal: Union[str, Principal], resource: str, action: str, pattern: Optional[str] = None
    ) -> Decision:
        """ALLOW or DENY; never raises for unknown principals or resources."""
        pid = principal.id if isinstance(principal, Principal) else principal
        with self._lock:
            entity = self.entities.get(pid)
            if action == "admin":
                ok = pid == ADMIN_ID
            elif action == "publish":
                ok = entity is not None and entity.kind is EntityKind.PUBLISHER and pid == resource
            elif action == "consume":
                ok = entity is not None and entity.kind is EntityKind.SUBSCRIBER and pid == resource
            elif action in ("declare", "delete"):
                target = self.entities.get(resource)
                ok = (pid == resource and entity is not None) or (target is not None and target.owner == pid)
            elif action == "bind":
                ok = (
                    entity is not None
                    and entity.kind is EntityKind.SUBSCRIBER
                    and self._covering(pid, resource, pattern or "#", self.clock()) is not None
                )
            elif action == "unbind":
                ok = entity is not None and entity.kind is EntityKind.SUBSCRIBER
            else:
                ok = False
        return Decision.ALLOW if ok else Decision.DENY

    def covering_permission(
        self, subscriber_id: str, target_entity: str, pattern: str, now: Optional[float] = None
    ) -> Optional[PermissionRecord]:
        with self._lock:
            return self._covering(subscriber_id, target_entity, pattern, self.clock() if now is None else now)

    def _covering(self, subscriber_id, target, pattern, now) -> Optional[PermissionRecord]:
        best = None
        for rec in self.permissions.get((subscriber_id, target), {}).values():
            if rec.expires_at > now and covers(rec.routing_pattern, pattern):
                if best is None or rec.expires_at > best.expires_at:
                    best = rec
        return best

    def permissions_for(self, subscriber_id: str, target_entity: str) -> list[PermissionRecord]:
        with self._lock:
            return list(self.permissions.get((subscriber_id, target_entity), {}).values())

    # -- follow workflow --------------------------------------------------

    def create_follow(self, subscriber_credential: Credential, target_entity: str, pattern: str = "#") -> str:
        sub = self._require(subscriber_credential, Role.ENTITY, EntityKind.SUBSCRIBER)
        parse_pattern(pattern)
        with self._lock:
            target = self.entities.get(target_entity)
            if target is None:
                raise NotFound(f"entity {target_entity!r} not found")
            if target.kind is not EntityKind.PUBLISHER:
                raise InvalidArgument(f"{target_entity!r} is not a publisher")
            follow_id = uuid.uuid4().hex
            self.follows[follow_id] = FollowRequest(
                follow_id, sub.id, target_entity, pattern, created_at=self.clock()
            )
            self._save("follows")
        return follow_id

    def follow_status(self, subscriber_credential: Credential, follow_id: str) -> FollowStatus:
        sub = self._require(subscriber_credential, Role.ENTITY, EntityKind.SUBSCRIBER)
        with self._lock:
            follow = self.follows.get(follow_id)
        if follow is None:
            raise NotFound(f"follow {follow_id!r} not found")
        if follow.subscriber_id != sub.id:
            raise AccessDenied("follow request belongs to another subscriber")
        return follow.status

    def list_follow_requests(self, provider_credential: Credential) -> list[dict]:
        provider = self._require(provider_credential, Role.PROVIDER)
        with self._lock:
            rows = []
            for f in self.follows.values():
                if f.status is not FollowStatus.PENDING:
                    continue
                target = self.entities.get(f.target_entity)
                if target is not None and target.owner == provider.id:
                    rows.append(
                        {
                            "follow_id": f.follow_id,
                            "subscriber_id": f.subscriber_id,
                            "target_entity": f.target_entity,
                            "pattern": f.requested_pattern,
                        }
                    )
        return sorted(rows, key=lambda r: r["follow_id"])

    def _pending_for(self, provider: Principal, follow_id: str) -> FollowRequest:
        follow = self.follows.get(follow_id)
        if follow is None:
            raise NotFound(f"follow {follow_id!r} not found")
        target = self.entities.get(follow.target_entity)
        if target is None or target.owner != provider.id:
            raise AccessDenied(f"{provider.id} does not own {follow.target_entity}")
        if follow.status is not FollowStatus.PENDING:
            raise Conflict(f"follow {follow_id} already {follow.status.value}")
        return follow

    def approve_follow(
        self, provider_credential: Credential, follow_id: str, validity_seconds: Optional[int] = None
    ) -> PermissionRecord:
        provider = self._require(provider_credential, Role.PROVIDER)
        validity = self.default_validity if validity_seconds is None else validity_seconds
        if isinstance(validity, bool) or not isinstance(validity, (int, float)) or validity <= 0:
            raise InvalidArgument("validity_seconds must be a positive number")
        with self._lock:
            follow = self._pending_for(provider, follow_id)
            now = self.clock()
            follow.status = FollowStatus.APPROVED
            follow.validity_seconds = validity
            follow.decided_at = now
            record = PermissionRecord(
                follow_id, follow.subscriber_id, follow.target_entity, follow.requested_pattern, now + validity
            )
            self.permissions.setdefault((record.subscriber_id, record.target_entity), {})[follow_id] = record
            self._save("follows")
            self._save("permissions")
        return record

    def reject_follow(self, provider_credential: Credential, follow_id: str) -> None:
        provider = self._require(provider_credential, Role.PROVIDER)
        with self._lock:
            follow = self._pending_for(provider, follow_id)
            follow.status = FollowStatus.REJECTED
            follow.decided_at = self.clock()
            self._save("follows")

    def expired_permissions(self, now: Optional[float] = None) -> list[PermissionRecord]:
        now = self.clock() if now is None else now
        with self._lock:
            return [r for table in self.permissions.values() for r in table.values() if r.expires_at <= now]

    def delete_permission(self, follow_id: str) -> None:
        with self._lock:
            for key, table in list(self.permissions.items()):
                if table.pop(follow_id, None) is not None:
                    if not table:
                        del self.permissions[key]
                    self._save("permissions")
                    return

    # -- persistence ------------------------------------------------------

    def _records(self, kind: str) -> list:
        if kind == "providers":
            return list(self.providers.values())
        if kind == "entities":
            return list(self.entities.values())
        if kind == "follows":
            return list(self.follows.values())
        return [r for table in self.permissions.values() for r in table.values()]

    def _save(self, kind: str) -> None:
        if self.data_dir is None:
            return
        doc = {"version": SNAPSHOT_VERSION, "type": kind, "records": [asdict(r) for r in self._records(kind)]}
        fd, tmp = tempfile.mkstemp(dir=self.data_dir, prefix=f".{kind}.")
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh, default=_enum_value, sort_keys=True)
        os.replace(tmp, self.data_dir / f"{kind}.json")

    def _load(self) -> None:
        loaders = {
            "providers": lambda r: ProviderRecord(**r),
            "entities": lambda r: EntityRecord(**{**r, "kind": EntityKind(r["kind"])}),
            "follows": lambda r: FollowRequest(**{**r, "status": FollowStatus(r["status"])}),
            "permissions": lambda r: PermissionRecord(**r),
        }
        for kind, build in loaders.items():
            path = self.data_dir / f"{kind}.json"
            if not path.exists():
                continue
            doc = json.loads(path.read_text())
            if doc.get("version") != SNAPSHOT_VERSION:
                raise InvalidArgument(f"{path}: unsupported snapshot version {doc.get('version')}")
            for raw in doc["records"]:
                rec = build(raw)
                if kind == "providers":
                    self.providers[rec.provider_id] = rec
                    self._by_key_id[rec.key_id] = rec.provider_id
                elif kind == "entities":
                    self.entities[rec.entity_id] = rec
                    self._by_key_id[rec.key_id] = rec.entity_id
                elif kind == "follows":
                    self.follows[rec.follow_id] = rec
                else:
                    self.permissions.setdefault((rec.subscriber_id, rec.target_entity), {})[rec.follow_id] = rec
        log.info("loaded %d providers, %d entities from %s", len(self.providers), len(self.entities), self.data_dir)


def _enum_value(obj):
    if isinstance(obj, enum.Enum):
        return obj.value
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _check_id(value: str) -> None:
    if not isinstance(value, str) or not value or len(value) > 128:
        raise InvalidArgument("ids must be 1-128 characters")
    if any(c.isspace() or c in "/?#" for c in value) or value.startswith("@"):
        raise InvalidArgument(f"id {value!r} contains forbidden characters")
    if value in RESERVED_IDS:
        raise Conflict(f"id {value!r} is reserved")
