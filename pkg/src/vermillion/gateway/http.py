"""HTTP/1.1 front-end for :class:`~vermillion.gateway.app.Gateway`."""

from __future__ import annotations

import json
import logging
import ssl
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import parse_qsl, urlsplit

from .app import ApiRequest, Gateway

log = logging.getLogger(__name__)

APIKEY_HEADER = "apikey"
MAX_BODY = 16 * 1024 * 1024


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True  # headers and body go out in separate writes
    server: "GatewayServer"

    def log_message(self, fmt, *args):
        log.debug("gateway: " + fmt, *args)

    def _reply(self, status: int, doc: dict) -> None:
        body = json.dumps(doc).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _dispatch(self) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY:
            self.close_connection = True
            self._reply(413, {"error": "payload-too-large", "message": f"body of {length} bytes"})
            return
        raw = self.rfile.read(length) if length else b""
        body = None
        if raw:
            try:
                body = json.loads(raw)
            except ValueError:
                self._reply(400, {"error": "invalid-argument", "message": "body is not valid JSON"})
                return
            if not isinstance(body, dict):
                self._reply(400, {"error": "invalid-argument", "message": "body must be a JSON object"})
                return
        url = urlsplit(self.path)
        request = ApiRequest(
            method=self.command,
            path=url.path,
            apikey=self.headers.get(APIKEY_HEADER),
            body=body,
            query=dict(parse_qsl(url.query)),
        )
        response = self.server.gateway.handle(request)
        self._reply(response.status, response.body)

    do_GET = _dispatch
    do_POST = _dispatch
    do_PUT = _dispatch
    do_DELETE = _dispatch


class GatewayServer(ThreadingHTTPServer):
    """Threaded HTTP server; pass an :class:`ssl.SSLContext` to serve HTTPS."""

    daemon_threads = True
    allow_reuse_address = True
    request_queue_size = 1024

    def __init__(
        self,
        gateway: Gateway,
        host: str = "127.0.0.1",
        port: int = 0,
        ssl_context: Optional[ssl.SSLContext] = None,
    ):
        self.gateway = gateway
        self.ssl_context = ssl_context
        super().__init__((host, port), _Handler)
        if ssl_context is not None:
            self.socket = ssl_context.wrap_socket(self.socket, server_side=True)
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self.server_address[1]

    @property
    def url(self) -> str:
        scheme = "https" if self.ssl_context else "http"
        return f"{scheme}://{self.server_address[0]}:{self.port}"

    def start(self) -> "GatewayServer":
        self._thread = threading.Thread(target=self.serve_forever, args=(0.05,), name="gateway", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._thread is not None:
            self.shutdown()
        self.server_close()
        self.gateway.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def server_ssl_context(certfile: str, keyfile: Optional[str] = None) -> ssl.SSLContext:
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
    ctx.load_cert_chain(certfile, keyfile)
    return ctx
