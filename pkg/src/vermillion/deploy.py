"""Stand up a whole fleet on localhost: auth store, brokers, gateways.

``LocalDeployment(subprocess=False)`` runs every component as threads in this
process, which is quick and convenient for tests. ``subprocess=True`` starts
each component as its own ``python -m vermillion.cli`` process wired by a
topology file, so benchmarks are not serialised on one interpreter lock.
"""

from __future__ import annotations

import logging
import os
import secrets
import shutil
import socket
import subprocess
import sys
import tempfile
import time
from pathlib import Path
from typing import Callable, Optional, Union

from .auth import AuthStore, RemoteAuthStore, StoreAuthHook
from .auth.store import ADMIN_ENV
from .broker import BrokerClient, BrokerConfig, BrokerServer
from .gateway import BindingManager, ChannelPool, Gateway, GatewayConfig, GatewayServer
from .router import NodeDescriptor, NodeRegistry, Router, RoutingMode, dump_topology
from .utility import Archiver, UnbindDaemon

log = logging.getLogger(__name__)


def free_port(host: str = "127.0.0.1") -> int:
    with socket.socket() as s:
        s.bind((host, 0))
        return s.getsockname()[1]


def wait_port(host: str, port: int, timeout: float = 15.0, proc: Optional[subprocess.Popen] = None) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if proc is not None and proc.poll() is not None:
            raise RuntimeError(f"process exited with {proc.returncode} before listening on {port}")
        try:
            with socket.create_connection((host, port), timeout=0.5):
                return
        except OSError:
            time.sleep(0.05)
    raise TimeoutError(f"nothing listening on {host}:{port} after {timeout}s")


class LocalDeployment:
    def __init__(
        self,
        nodes: int = 1,
        mode: Union[RoutingMode, str] = RoutingMode.FEDERATED,
        gateways: int = 1,
        subprocess: bool = False,
        gateway_config: Optional[GatewayConfig] = None,
        broker_options: Optional[dict] = None,
        hash_iterations: int = 1000,
        clock: Optional[Callable[[], float]] = None,
        workdir: Optional[Union[str, Path]] = None,
        log_level: str = "WARNING",
    ):
        self.node_count = nodes
        self.mode = RoutingMode.parse(mode)
        if self.mode is RoutingMode.SINGLE and nodes != 1:
            raise ValueError("single mode uses exactly one node")
        self.gateway_count = gateways
        self.use_subprocess = subprocess
        self.secret = secrets.token_urlsafe(16)
        self.admin_key = secrets.token_urlsafe(24)
        self.gateway_config = gateway_config or GatewayConfig()
        self.gateway_config.broker_secret = self.secret
        self.broker_options = dict(broker_options or {})
        self.hash_iterations = hash_iterations
        self.clock = clock or time.time
        self._own_workdir = workdir is None
        self.workdir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="vermillion-"))
        self.log_level = log_level
        self.store = None
        self.registry = NodeRegistry()
        self.brokers: list[BrokerServer] = []
        self.gateways: list[Gateway] = []
        self.gateway_servers: list[GatewayServer] = []
        self.gateway_urls: list[str] = []
        self.auth_url: Optional[str] = None
        self._procs: list[subprocess.Popen] = []

    # -- lifecycle --------------------------------------------------------

    def start(self) -> "LocalDeployment":
        try:
            if self.use_subprocess:
                self._start_processes()
            else:
                self._start_threads()
        except BaseException:
            self.stop()
            raise
        return self

    def _start_threads(self) -> None:
        self.store = AuthStore(admin_key=self.admin_key, clock=self.clock, hash_iterations=self.hash_iterations)
        hook = StoreAuthHook(self.store)
        for i in range(1, self.node_count + 1):
            config = BrokerConfig(node_id=f"n{i}", mode=self.mode, secret=self.secret, **self.broker_options)
            self.brokers.append(BrokerServer(config, hook=hook))
        nodes = [NodeDescriptor(b.node_id, "127.0.0.1", b.port, i + 1) for i, b in enumerate(self.brokers)]
        for b in self.brokers:
            b.set_peers(nodes)
            b.start()
        self.registry = NodeRegistry(nodes)
        for _ in range(self.gateway_count):
            gateway = Gateway(self.store, Router(self.registry, self.mode), self._gateway_config())
            server = GatewayServer(gateway).start()
            self.gateways.append(gateway)
            self.gateway_servers.append(server)
            self.gateway_urls.append(server.url)

    def _gateway_config(self) -> GatewayConfig:
        c = self.gateway_config
        return GatewayConfig(**{k: getattr(c, k) for k in c.__dataclass_fields__})

    def _spawn(self, args: list[str], port: int) -> subprocess.Popen:
        env = {**os.environ, ADMIN_ENV: self.admin_key, "PYTHONUNBUFFERED": "1"}
        logfile = open(self.workdir / f"{args[0]}-{port}.log", "wb")
        cmd = [sys.executable, "-m", "vermillion.cli", "--log-level", self.log_level, *args]
        proc = subprocess.Popen(cmd, env=env, stdout=logfile, stderr=subprocess.STDOUT)
        logfile.close()
        self._procs.append(proc)
        return proc

    def _start_processes(self) -> None:
        auth_port = free_port()
        proc = self._spawn(
            ["auth-backend", "--port", str(auth_port), "--secret", self.secret,
             "--hash-iterations", str(self.hash_iterations)],
            auth_port,
        )
        wait_port("127.0.0.1", auth_port, proc=proc)
        self.auth_url = f"http://127.0.0.1:{auth_port}"
        self.store = RemoteAuthStore(self.auth_url, self.secret)

        nodes = [NodeDescriptor(f"n{i}", "127.0.0.1", free_port(), i) for i in range(1, self.node_count + 1)]
        self.registry = NodeRegistry(nodes)
        topology = self.workdir / "topology.json"
        dump_topology(topology, nodes, self.mode)
        broker_procs = []
        for n in nodes:
            args = ["broker", "--node-id", n.node_id, "--topology", str(topology), "--secret", self.secret,
                    "--auth-url", self.auth_url]
            for key, value in self.broker_options.items():
                args += [f"--{key.replace('_', '-')}", str(value)]
            broker_procs.append((n, self._spawn(args, n.port)))
        for n, p in broker_procs:
            wait_port(n.host, n.port, proc=p)

        c = self.gateway_config
        for _ in range(self.gateway_count):
            port = free_port()
            args = ["gateway", "--port", str(port), "--topology", str(topology), "--secret", self.secret,
                    "--auth-url", self.auth_url, "--max-per-node", str(c.max_per_node)]
            if not c.pooled:
                args.append("--no-pool")
            if c.queue_depth:
                args += ["--queue-depth", str(c.queue_depth)]
            p = self._spawn(args, port)
            wait_port("127.0.0.1", port, proc=p)
            self.gateway_urls.append(f"http://127.0.0.1:{port}")

    def stop(self) -> None:
        for server in self.gateway_servers:
            server.stop()
        for broker in self.brokers:
            broker.stop()
        for proc in reversed(self._procs):
            if proc.poll() is None:
                proc.terminate()
        for proc in self._procs:
            try:
                proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
        self.gateway_servers.clear()
        self.brokers.clear()
        self._procs.clear()
        if self._own_workdir:
            shutil.rmtree(self.workdir, ignore_errors=True)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- access -----------------------------------------------------------

    @property
    def gateway_url(self) -> str:
        return self.gateway_urls[0]

    def broker_client(self, node_id: str) -> BrokerClient:
        node = self.registry.get(node_id)
        return BrokerClient(node.host, node.port, secret=self.secret, node_id=node_id)

    def system_pool(self, max_per_node: int = 4) -> ChannelPool:
        return ChannelPool(lambda n: self.broker_client(n.node_id), self.registry.get, max_per_node)

    def archiver(self, archive_dir: Union[str, Path], **kwargs) -> Archiver:
        return Archiver(self.registry, archive_dir, lambda n: self.broker_client(n.node_id), **kwargs)

    def unbind_daemon(self) -> UnbindDaemon:
        manager = BindingManager(self.store, Router(self.registry, self.mode), self.system_pool())
        return UnbindDaemon(self.store, manager)
