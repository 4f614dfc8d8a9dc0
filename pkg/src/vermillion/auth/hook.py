"""Broker-side authorisation backed by the auth store.

Ownership facts (publish, consume, declare, delete) never change once an
entity exists, so their ALLOW answers are cached for ``ttl`` seconds. Bind
decisions depend on expiring permissions and always go to the store. The
archive queue is outside the entity permission model: only fleet-internal
callers may touch it.
"""

from __future__ import annotations

import time
from typing import Callable, Optional

from ..principals import ARCHIVE_QUEUE, SYSTEM
from .cache import TTLCache
from .store import Decision, Role

SYSTEM_ONLY = {"enqueue", "replicate", "shovel", "inspect", "drain"}
CACHEABLE = {"publish", "consume", "declare", "delete"}


class StoreAuthHook:
    def __init__(self, store, ttl: float = 5.0, clock: Callable[[], float] = time.monotonic):
        self.store = store
        self.cache: TTLCache[bool] = TTLCache(ttl, clock=clock)

    def authorize(self, principal: str, action: str, resource: str, pattern: Optional[str] = None) -> bool:
        if principal == SYSTEM:
            return True
        if action in SYSTEM_ONLY:
            return False
        if resource == ARCHIVE_QUEUE:
            return False
        key = (principal, action, resource, pattern)
        if action in CACHEABLE and self.cache.get(key):
            return True
        allowed = self.store.check_permission(principal, resource, action, pattern) is Decision.ALLOW
        if allowed and action in CACHEABLE:
            self.cache.put(key, True)
        return allowed

    def authenticate(self, apikey: str) -> Optional[str]:
        principal = self.store.authenticate(apikey)
        if principal is None or principal.role is not Role.ENTITY:
            return None
        return principal.id
