"""Drive the register/follow/share/bind workflow through a gateway client."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional


class WorkflowError(RuntimeError):
    def __init__(self, step: str, status: int, body: dict):
        super().__init__(f"{step} failed with {status}: {body}")
        self.step = step
        self.status = status
        self.body = body


def expect(result: tuple[int, dict], step: str, *codes: int) -> dict:
    status, body = result
    if status not in (codes or (200, 201)):
        raise WorkflowError(step, status, body)
    return body


@dataclass
class Channel:
    """A provisioned publisher/subscriber pair and the keys to drive it."""

    publisher_provider: str
    publisher_provider_key: str
    publisher: str
    publisher_key: str
    publisher_node: str
    subscriber_provider: str
    subscriber_provider_key: str
    subscriber: str
    subscriber_key: str
    subscriber_node: str
    follow_id: Optional[str] = None


def register_provider(client, admin_key: str, provider_id: str) -> str:
    return expect(client.register_provider(admin_key, provider_id), "register-provider")["apikey"]


def register_entity(client, provider_key: str, entity_id: str, kind: str, item: Any = None) -> tuple[str, str]:
    body = expect(client.register_entity(provider_key, entity_id, kind, item), f"register-entity {entity_id}")
    return body["apikey"], body["node"]


def provision(
    client,
    admin_key: str,
    publisher_provider: str,
    publisher: str,
    subscriber_provider: str,
    subscriber: str,
    pattern: Optional[str] = None,
    validity_seconds: Optional[float] = None,
    bind: bool = True,
    provider_keys: Optional[dict[str, str]] = None,
) -> Channel:
    """Register whatever is missing, then follow, share and (optionally) bind.

    ``provider_keys`` caches provider keys between calls so providers are
    registered once.
    """
    keys = provider_keys if provider_keys is not None else {}
    for provider in (publisher_provider, subscriber_provider):
        if provider not in keys:
            keys[provider] = register_provider(client, admin_key, provider)
    pub_key, pub_node = register_entity(client, keys[publisher_provider], publisher, "publisher")
    sub_key, sub_node = register_entity(client, keys[subscriber_provider], subscriber, "subscriber")
    channel = Channel(
        publisher_provider, keys[publisher_provider], publisher, pub_key, pub_node,
        subscriber_provider, keys[subscriber_provider], subscriber, sub_key, sub_node,
    )
    follow_id = expect(client.follow(sub_key, publisher, pattern), "follow")["follow_id"]
    expect(client.share(keys[publisher_provider], follow_id, validity_seconds), "share")
    channel.follow_id = follow_id
    if bind:
        expect(client.bind(sub_key, publisher, pattern), "bind")
    return channel


def drain(client, subscriber_key: str, batch: int = 1000) -> list[dict]:
    """Subscribe until the queue comes back empty."""
    out: list[dict] = []
    while True:
        messages = expect(client.subscribe(subscriber_key, batch), "subscribe")["messages"]
        out.extend(messages)
        if len(messages) < batch:
            return out
