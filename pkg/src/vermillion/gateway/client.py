"""Keep-alive REST client for the gateway, one connection per instance."""

from __future__ import annotations

import http.client
import json
import ssl
from typing import Any, Optional
from urllib.parse import urlencode, urlsplit

from .app import ApiRequest, Gateway
from .http import APIKEY_HEADER


class GatewayClient:
    """Calls return ``(status, body)``; transport errors propagate as ``OSError``."""

    def __init__(self, url: str, timeout: float = 30.0, verify: bool = True):
        parts = urlsplit(url)
        self.host = parts.hostname or "127.0.0.1"
        self.https = parts.scheme == "https"
        self.port = parts.port or (443 if self.https else 80)
        self.timeout = timeout
        self.verify = verify
        self._conn: Optional[http.client.HTTPConnection] = None

    def _connection(self) -> http.client.HTTPConnection:
        if self._conn is None:
            if self.https:
                ctx = ssl.create_default_context()
                if not self.verify:
                    ctx.check_hostname = False
                    ctx.verify_mode = ssl.CERT_NONE
                self._conn = http.client.HTTPSConnection(self.host, self.port, timeout=self.timeout, context=ctx)
            else:
                self._conn = http.client.HTTPConnection(self.host, self.port, timeout=self.timeout)
        return self._conn

    def request(
        self,
        method: str,
        path: str,
        apikey: Optional[str] = None,
        body: Optional[dict] = None,
        query: Optional[dict] = None,
    ) -> tuple[int, dict]:
        if query:
            path = f"{path}?{urlencode(query)}"
        headers = {"Content-Type": "application/json"}
        if apikey is not None:
            headers[APIKEY_HEADER] = apikey
        data = json.dumps(body).encode() if body is not None else None
        for attempt in (1, 2):
            conn = self._connection()
            try:
                conn.request(method, path, data, headers)
                resp = conn.getresponse()
                raw = resp.read()
                break
            except (http.client.RemoteDisconnected, BrokenPipeError, ConnectionResetError):
                # a keep-alive connection the server already closed; retry once on a fresh one
                self.close()
                if attempt == 2:
                    raise
        if resp.will_close:
            self.close()
        return resp.status, json.loads(raw) if raw else {}

    def close(self) -> None:
        if self._conn is not None:
            self._conn.close()
            self._conn = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- endpoint helpers ---------------------------------------------------

    def register_provider(self, admin_key: str, provider_id: str):
        return self.request("POST", "/admin/register-provider", admin_key, {"provider_id": provider_id})

    def register_entity(self, provider_key: str, entity_id: str, kind: str, catalogue_item: Any = None):
        body = {"entity_id": entity_id, "kind": kind, "catalogue_item": catalogue_item or {}}
        return self.request("POST", "/owner/register-entity", provider_key, body)

    def publish(self, apikey: str, data: Any, routing_key: Optional[str] = None):
        body = {"data": data}
        if routing_key is not None:
            body["routing_key"] = routing_key
        return self.request("POST", "/entity/publish", apikey, body)

    def subscribe(self, apikey: str, max_messages: Optional[int] = None):
        query = {"max_messages": max_messages} if max_messages else None
        return self.request("GET", "/entity/subscribe", apikey, query=query)

    def catalogue(self, **filters):
        return self.request("GET", "/cat", query=filters or None)

    def follow(self, apikey: str, entity_id: str, pattern: Optional[str] = None):
        body = {"entity_id": entity_id}
        if pattern is not None:
            body["pattern"] = pattern
        return self.request("POST", "/entity/follow", apikey, body)

    def follow_status(self, apikey: str, follow_id: str):
        return self.request("GET", "/entity/follow-status", apikey, query={"follow_id": follow_id})

    def follow_requests(self, apikey: str):
        return self.request("GET", "/entity/follow-requests", apikey)

    def share(self, apikey: str, follow_id: str, validity_seconds: Optional[float] = None):
        body: dict = {"follow_id": follow_id}
        if validity_seconds is not None:
            body["validity_seconds"] = validity_seconds
        return self.request("POST", "/entity/share", apikey, body)

    def reject_follow(self, apikey: str, follow_id: str):
        return self.request("POST", "/entity/reject-follow", apikey, {"follow_id": follow_id})

    def bind(self, apikey: str, entity_id: str, pattern: Optional[str] = None):
        body = {"entity_id": entity_id}
        if pattern is not None:
            body["pattern"] = pattern
        return self.request("POST", "/entity/bind", apikey, body)

    def unbind(self, apikey: str, entity_id: str, pattern: Optional[str] = None):
        body = {"entity_id": entity_id}
        if pattern is not None:
            body["pattern"] = pattern
        return self.request("POST", "/entity/unbind", apikey, body)

    def stats(self):
        return self.request("GET", "/stats")


class LocalGatewayClient(GatewayClient):
    """Same surface as :class:`GatewayClient`, calling a gateway in-process."""

    def __init__(self, gateway: Gateway):
        self.gateway = gateway
        self._conn = None

    def request(self, method, path, apikey=None, body=None, query=None):
        q = {k: str(v) for k, v in (query or {}).items()}
        response = self.gateway.handle(ApiRequest(method, path, apikey, body, q))
        return response.status, response.body

    def close(self) -> None:
        pass
