"""HTTP front-end for the auth store, and a client with the store's interface.

Gateways, broker auth hooks and daemons running in other processes share one
store through this service. Calls are ``POST /rpc/<method>`` with a JSON
object of keyword arguments and an ``x-fleet-secret`` header; replies are
``{"result": ...}`` or ``{"error": kind, "message": text}``.
"""

from __future__ import annotations

import hmac
import http.client
import inspect
import json
import logging
import threading
from dataclasses import asdict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Optional
from urllib.parse import urlsplit

from ..errors import NodeUnavailable, VermillionError, error_from_kind
from .store import (
    AuthStore,
    Decision,
    EntityKind,
    EntityRecord,
    FollowStatus,
    PermissionRecord,
    Principal,
)

log = logging.getLogger(__name__)

SECRET_HEADER = "x-fleet-secret"

METHODS = {
    "authenticate",
    "register_provider",
    "register_entity",
    "remove_entity",
    "get_entity",
    "list_entities",
    "check_permission",
    "covering_permission",
    "permissions_for",
    "create_follow",
    "follow_status",
    "list_follow_requests",
    "approve_follow",
    "reject_follow",
    "expired_permissions",
    "delete_permission",
}


def _encode(value: Any) -> Any:
    if isinstance(value, Principal):
        return {"__principal__": value.to_dict()}
    if isinstance(value, (EntityRecord, PermissionRecord)):
        d = asdict(value)
        if isinstance(value, EntityRecord):
            d["kind"] = value.kind.value
        return d
    if isinstance(value, (Decision, FollowStatus, EntityKind)):
        return value.value
    if isinstance(value, list):
        return [_encode(v) for v in value]
    return value


def _decode_arg(value: Any) -> Any:
    if isinstance(value, dict) and "__principal__" in value:
        return Principal.from_dict(value["__principal__"])
    return value


def _entity(d: dict) -> EntityRecord:
    return EntityRecord(**{**d, "kind": EntityKind(d["kind"])})


def _permission(d: Optional[dict]) -> Optional[PermissionRecord]:
    return PermissionRecord(**d) if d else None


_RESULT = {
    "authenticate": lambda r: Principal.from_dict(r["__principal__"]) if r else None,
    "get_entity": _entity,
    "list_entities": lambda r: [_entity(d) for d in r],
    "check_permission": Decision,
    "covering_permission": _permission,
    "permissions_for": lambda r: [_permission(d) for d in r],
    "follow_status": FollowStatus,
    "approve_follow": _permission,
    "expired_permissions": lambda r: [_permission(d) for d in r],
}


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True  # headers and body go out in separate writes
    server: "AuthBackendServer"

    def log_message(self, fmt, *args):
        log.debug("auth-backend: " + fmt, *args)

    def _reply(self, status: int, doc: dict) -> None:
        body = json.dumps(doc).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b"{}"
        if not hmac.compare_digest(self.headers.get(SECRET_HEADER, ""), self.server.secret):
            self._reply(401, {"error": "unauthenticated", "message": "bad fleet secret"})
            return
        name = self.path.rsplit("/", 1)[-1]
        if not self.path.startswith("/rpc/") or name not in METHODS:
            self._reply(404, {"error": "not-found", "message": f"no method {self.path}"})
            return
        try:
            kwargs = {k: _decode_arg(v) for k, v in json.loads(raw).items()}
            result = getattr(self.server.store, name)(**kwargs)
            self._reply(200, {"result": _encode(result)})
        except VermillionError as exc:
            self._reply(exc.status, {"error": exc.kind, "message": str(exc)})
        except (TypeError, ValueError) as exc:
            self._reply(400, {"error": "invalid-argument", "message": str(exc)})


class AuthBackendServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True
    request_queue_size = 256

    def __init__(self, store: AuthStore, host: str = "127.0.0.1", port: int = 0, secret: str = ""):
        self.store = store
        self.secret = secret
        super().__init__((host, port), _Handler)
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "AuthBackendServer":
        self._thread = threading.Thread(target=self.serve_forever, args=(0.05,), name="auth-backend", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._thread is not None:
            self.shutdown()
        self.server_close()


class RemoteAuthStore:
    """Drop-in stand-in for :class:`AuthStore` that calls an auth backend."""

    def __init__(self, url: str, secret: str = "", timeout: float = 10.0):
        parts = urlsplit(url)
        self.host = parts.hostname or "127.0.0.1"
        self.port = parts.port or 80
        self.secret = secret
        self.timeout = timeout
        self._local = threading.local()

    def _conn(self) -> http.client.HTTPConnection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = http.client.HTTPConnection(self.host, self.port, timeout=self.timeout)
            self._local.conn = conn
        return conn

    def _call(self, method: str, **kwargs):
        body = json.dumps({k: _encode(v) for k, v in kwargs.items()})
        headers = {"Content-Type": "application/json", SECRET_HEADER: self.secret}
        for attempt in (1, 2):
            conn = self._conn()
            try:
                conn.request("POST", f"/rpc/{method}", body, headers)
                resp = conn.getresponse()
                doc = json.loads(resp.read())
                break
            except (OSError, http.client.HTTPException) as exc:
                conn.close()
                self._local.conn = None
                if attempt == 2:
                    raise NodeUnavailable(f"auth backend unreachable: {exc}") from exc
        if "error" in doc:
            raise error_from_kind(doc["error"], doc.get("message", ""))
        decode = _RESULT.get(method)
        return decode(doc["result"]) if decode else doc["result"]

    def __getattr__(self, name: str):
        if name in METHODS:
            return lambda *args, **kwargs: self._call_positional(name, args, kwargs)
        raise AttributeError(name)

    def _call_positional(self, name, args, kwargs):
        if args:
            params = list(inspect.signature(getattr(AuthStore, name)).parameters)[1:]
            kwargs = {**dict(zip(params, args)), **kwargs}
        return self._call(name, **kwargs)
