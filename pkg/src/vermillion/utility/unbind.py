"""Revoke expired permissions: remove their bindings and unused relay chains."""

from __future__ import annotations

import logging
from typing import Optional

from ..broker.topics import covers
from ..errors import NodeUnavailable, NotFound, PeerTimeout, PoolExhausted
from ..gateway.relay import BindingManager

log = logging.getLogger(__name__)

RETRYABLE = (NodeUnavailable, PeerTimeout, PoolExhausted, OSError)


class UnbindDaemon:
    def __init__(self, store, bindings: BindingManager):
        self.store = store
        self.bindings = bindings

    def tick(self, now: Optional[float] = None) -> int:
        """Revoke every permission expired at *now*; returns how many were revoked.

        A record whose broker work fails stays in the store and is retried on
        the next tick; the store already denies it, so nothing leaks meanwhile.
        """
        revoked = 0
        for record in self.store.expired_permissions(now):
            sub, target = record.subscriber_id, record.target_entity
            try:
                for binding in self.bindings.bindings(sub, target):
                    if not covers(record.routing_pattern, binding.pattern):
                        continue
                    if self.store.covering_permission(sub, target, binding.pattern, now) is not None:
                        continue
                    self.bindings.unbind(sub, target, binding.pattern, as_subscriber=False)
            except NotFound:
                # subscriber or publisher no longer exists: nothing left to unbind
                pass
            except RETRYABLE as exc:
                log.warning("unbind: keeping %s for retry: %s", record.follow_id, exc)
                continue
            self.store.delete_permission(record.follow_id)
            revoked += 1
        log.info("unbind: revoked %d permissions", revoked)
        return revoked


def unbind_daemon_tick(daemon: UnbindDaemon, now: Optional[float] = None) -> int:
    return daemon.tick(now)
