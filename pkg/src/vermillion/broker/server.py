"""TCP front-end for :class:`BrokerCore`."""

from __future__ import annotations

import hmac
import logging
import socket
import socketserver
import threading
from typing import Optional

from ..errors import InvalidArgument, Unauthenticated, VermillionError
from ..principals import SYSTEM
from .core import AuthHook, BrokerConfig, BrokerCore, Message
from .peers import PeerLinks
from .protocol import encode_frame, pack_messages, read_frame, unpack_messages
from .shovel import ShovelRelay

log = logging.getLogger(__name__)


class _Dispatcher:
    """Maps wire verbs onto core operations. Each returns ``(result, blob)``."""

    def __init__(self, core: BrokerCore):
        self.core = core

    def __call__(self, verb: str, args: dict, blob: bytes, principal: str):
        fn = getattr(self, "do_" + verb, None)
        if fn is None:
            raise InvalidArgument(f"unknown verb {verb!r}")
        return fn(args, blob, principal)

    def do_ping(self, args, blob, who):
        return self.core.node_id, b""

    def do_declare_exchange(self, args, blob, who):
        self.core.declare_exchange(args["name"], principal=who)
        return None, b""

    def do_declare_queue(self, args, blob, who):
        self.core.declare_queue(args["name"], args.get("depth_limit"), principal=who)
        return None, b""

    def do_delete_exchange(self, args, blob, who):
        self.core.delete_exchange(args["name"], principal=who)
        return None, b""

    def do_delete_queue(self, args, blob, who):
        self.core.delete_queue(args["name"], principal=who)
        return None, b""

    def do_bind(self, args, blob, who):
        self.core.bind(args["exchange"], args["queue"], args["pattern"], args.get("expires_at"), principal=who)
        return None, b""

    def do_unbind(self, args, blob, who):
        self.core.unbind(args["exchange"], args["queue"], args["pattern"], principal=who)
        return None, b""

    def do_publish(self, args, blob, who):
        msg = Message(args["exchange"], args["routing_key"], blob, args.get("timestamp") or 0, args.get("publisher") or who)
        return self.core.publish(msg, principal=who), b""

    def do_publish_batch(self, args, blob, who):
        msgs = unpack_messages(args["messages"], blob)
        return self.core.publish_batch(msgs, principal=who, relayed=bool(args.get("relayed"))), b""

    def do_enqueue(self, args, blob, who):
        self.core.enqueue(args["queue"], unpack_messages(args["messages"], blob), principal=who)
        return None, b""

    def do_consume(self, args, blob, who):
        msgs = self.core.consume(args["queue"], int(args["max_messages"]), principal=who)
        return pack_messages(msgs)

    def do_peek(self, args, blob, who):
        return pack_messages(self.core.peek(args["queue"], int(args["max_messages"]), principal=who))

    def do_ack(self, args, blob, who):
        self.core.ack(args["queue"], int(args["count"]), principal=who)
        return None, b""

    def do_create_shovel(self, args, blob, who):
        sid = self.core.create_shovel(args["source_queue"], args["dest_node"], args["dest_exchange"], principal=who)
        return sid, b""

    def do_delete_shovel(self, args, blob, who):
        self.core.delete_shovel(args["shovel_id"], principal=who)
        return None, b""

    def do_list_shovels(self, args, blob, who):
        return [s.to_dict() for s in self.core.list_shovels(principal=who)], b""

    def do_list_bindings(self, args, blob, who):
        bindings = self.core.list_bindings(args.get("exchange"), args.get("queue"), principal=who)
        return [b.to_dict() for b in bindings], b""

    def do_list_exchanges(self, args, blob, who):
        return self.core.list_exchanges(principal=who), b""

    def do_list_queues(self, args, blob, who):
        return self.core.list_queues(principal=who), b""

    def do_queue_stats(self, args, blob, who):
        return self.core.queue_stats(args["name"], principal=who), b""

    def do_replicate(self, args, blob, who):
        self.core.apply_replication(args["event"], principal=who)
        return None, b""


class _Handler(socketserver.StreamRequestHandler):
    server: "_TCPServer"

    def setup(self):
        super().setup()
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.server.track(self.request, True)

    def finish(self):
        self.server.track(self.request, False)
        try:
            super().finish()
        except OSError:
            pass

    def _send(self, header: dict, blob: bytes = b"") -> None:
        self.wfile.write(encode_frame(header, blob))

    def _authenticate(self) -> Optional[str]:
        header, _ = read_frame(self.rfile)
        args = header.get("args") or {}
        broker = self.server.broker
        if header.get("verb") != "auth":
            self._send({"ok": False, "error": Unauthenticated.kind, "message": "first frame must be auth"})
            return None
        if "apikey" in args:
            principal = broker.core.hook.authenticate(str(args["apikey"]))
        elif hmac.compare_digest(str(args.get("secret", "")), broker.config.secret):
            principal = SYSTEM
        else:
            principal = None
        if principal is None:
            self._send({"ok": False, "error": Unauthenticated.kind, "message": "bad credentials"})
            return None
        self._send({"ok": True, "result": principal})
        return principal

    def handle(self):
        try:
            channel_principal = self._authenticate()
            if channel_principal is None:
                return
            dispatch = self.server.broker.dispatch
            while True:
                header, blob = read_frame(self.rfile)
                acting = channel_principal
                if channel_principal == SYSTEM and header.get("as"):
                    acting = header["as"]
                try:
                    result, rblob = dispatch(header.get("verb", ""), header.get("args") or {}, blob, acting)
                    self._send({"ok": True, "result": result}, rblob)
                except VermillionError as exc:
                    self._send({"ok": False, "error": exc.kind, "message": str(exc)})
                except (KeyError, TypeError, ValueError) as exc:
                    self._send({"ok": False, "error": "invalid-argument", "message": repr(exc)})
        except (EOFError, ConnectionError, OSError):
            return


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True
    request_queue_size = 256

    def __init__(self, address, broker: "BrokerServer"):
        self.broker = broker
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()
        super().__init__(address, _Handler)

    def track(self, sock: socket.socket, add: bool) -> None:
        with self._conns_lock:
            (self._conns.add if add else self._conns.discard)(sock)

    def close_connections(self) -> None:
        with self._conns_lock:
            conns = list(self._conns)
        for s in conns:
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass


class BrokerServer:
    """A broker node listening on ``config.host:config.port`` (0 picks a free port)."""

    def __init__(self, config: BrokerConfig, hook: Optional[AuthHook] = None):
        self.config = config
        self.core = BrokerCore(config, hook)
        self.dispatch = _Dispatcher(self.core)
        self._tcp = _TCPServer((config.host, config.port), self)
        self.port = self._tcp.server_address[1]
        config.port = self.port
        self.core.peers = PeerLinks(config.node_id, config.peers, config.secret, config.peer_timeout)
        self.core.relay_factory = self._make_relay
        self._thread: Optional[threading.Thread] = None

    @property
    def node_id(self) -> str:
        return self.config.node_id

    @property
    def address(self) -> tuple[str, int]:
        return (self.config.host, self.port)

    def set_peers(self, peers) -> None:
        self.config.peers = list(peers)
        self.core.peers.update(self.config.peers)

    def _make_relay(self, core: BrokerCore, shovel):
        c = self.config
        return ShovelRelay(
            core,
            shovel,
            self.core.peers.connect,
            batch=c.shovel_batch,
            idle=c.shovel_idle,
            max_failures=c.shovel_max_failures,
            backoff=c.shovel_backoff,
        )

    def start(self) -> "BrokerServer":
        self._thread = threading.Thread(target=self._tcp.serve_forever, args=(0.05,), name=f"broker-{self.node_id}", daemon=True)
        self._thread.start()
        log.info("broker %s listening on %s:%d (%s)", self.node_id, self.config.host, self.port, self.config.mode.value)
        return self

    def serve_forever(self) -> None:
        log.info("broker %s listening on %s:%d (%s)", self.node_id, self.config.host, self.port, self.config.mode.value)
        self._tcp.serve_forever()

    def stop(self) -> None:
        self.core.close()
        if self._thread is not None:
            self._tcp.shutdown()
        self._tcp.server_close()
        self._tcp.close_connections()
        self.core.peers.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
