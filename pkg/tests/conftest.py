import time

import pytest

from vermillion.broker import BrokerClient, BrokerConfig, BrokerServer
from vermillion.router import NodeDescriptor, RoutingMode


def wait_for(predicate, timeout=10.0, interval=0.01):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return predicate()


def start_fleet(n, mode=RoutingMode.FEDERATED, hook=None, **config):
    servers = [
        BrokerServer(BrokerConfig(node_id=f"n{i}", mode=mode, secret="s3cret", **config), hook=hook)
        for i in range(1, n + 1)
    ]
    peers = [NodeDescriptor(s.node_id, "127.0.0.1", s.port, i + 1) for i, s in enumerate(servers)]
    for s in servers:
        s.set_peers(peers)
        s.start()
    return servers


@pytest.fixture
def fleet_factory():
    started = []

    def factory(n, mode=RoutingMode.FEDERATED, hook=None, **config):
        servers = start_fleet(n, mode, hook, **config)
        started.extend(servers)
        return servers

    yield factory
    for s in started:
        s.stop()


def connect(server):
    return BrokerClient("127.0.0.1", server.port, secret="s3cret", node_id=server.node_id)
