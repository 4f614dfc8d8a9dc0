import pytest

from conftest import connect, wait_for
from vermillion.broker import BrokerClient
from vermillion.errors import Conflict, InvalidArgument, NotFound, PeerTimeout, Unauthenticated
from vermillion.router import RoutingMode


def test_auth_frame_required(fleet_factory):
    (node,) = fleet_factory(1)
    with pytest.raises(Unauthenticated):
        BrokerClient("127.0.0.1", node.port, secret="wrong")
    with connect(node) as c:
        assert c.ping() == "n1"


def test_round_trip_over_wire(fleet_factory):
    (node,) = fleet_factory(1)
    with connect(node) as c:
        c.declare_exchange("ent1")
        c.declare_queue("sub1", 10)
        with pytest.raises(Conflict):
            c.declare_queue("sub1", 20)
        c.bind("ent1", "sub1", "temp.#")
        for i in range(5):
            c.publish("ent1", "temp.room1", f"m{i}".encode(), publisher="ent1")
        got = c.consume("sub1", 3)
        assert [m.payload for m in got] == [b"m0", b"m1", b"m2"]
        assert got[0].routing_key == "temp.room1" and got[0].publisher == "ent1" and got[0].timestamp > 0
        assert [m.payload for m in c.consume("sub1", 10)] == [b"m3", b"m4"]
        assert c.queue_stats("archive")["depth"] == 5
        assert [b.pattern for b in c.list_bindings(exchange="ent1")] == ["temp.#"]
        with pytest.raises(NotFound):
            c.consume("ghost", 1)


def _shovel_setup(a, b):
    ca, cb = connect(a), connect(b)
    ca.declare_exchange("pub")
    ca.declare_queue("stage", 100_000)
    ca.bind("pub", "stage", "#")
    cb.declare_exchange("pub")
    cb.declare_queue("sub", 100_000)
    cb.bind("pub", "sub", "#")
    return ca, cb


def test_shovel_relays_in_order(fleet_factory):
    a, b = fleet_factory(2)
    ca, cb = _shovel_setup(a, b)
    sid = ca.create_shovel("stage", "n2", "pub")
    for i in range(100):
        ca.publish("pub", "seq", str(i).encode())
    assert wait_for(lambda: cb.queue_stats("sub")["depth"] == 100)
    assert [int(m.payload) for m in cb.consume("sub", 1000)] == list(range(100))
    # relayed copies are archived only on the originating node
    assert cb.queue_stats("archive")["depth"] == 0
    assert [s.shovel_id for s in ca.list_shovels()] == [sid]
    with pytest.raises(Conflict):
        ca.create_shovel("stage", "n2", "pub")

    ca.delete_shovel(sid)
    ca.delete_shovel(sid)
    ca.publish("pub", "seq", b"late")
    assert not wait_for(lambda: cb.queue_stats("sub")["depth"] > 0, timeout=0.3)
    assert ca.list_shovels() == []


def test_shovel_rejects_bad_specs(fleet_factory):
    a, b = fleet_factory(2)
    ca, _ = _shovel_setup(a, b)
    with pytest.raises(NotFound):
        ca.create_shovel("missing", "n2", "pub")
    with pytest.raises(InvalidArgument):
        ca.create_shovel("stage", "n1", "pub")


def test_shovel_goes_inactive_when_dest_down(fleet_factory):
    a, b = fleet_factory(2, shovel_max_failures=3, shovel_backoff=0.01)
    ca, _ = _shovel_setup(a, b)
    b.stop()
    ca.create_shovel("stage", "n2", "pub")
    ca.publish("pub", "k", b"kept")
    assert wait_for(lambda: not ca.list_shovels()[0].active, timeout=5)
    shovel = ca.list_shovels()[0]
    assert shovel.failures == 3
    # nothing is lost from the source queue
    assert ca.queue_stats("stage")["depth"] == 1


def test_clustered_declare_replicates(fleet_factory):
    nodes = fleet_factory(4, RoutingMode.CLUSTERED)
    connect(nodes[0]).declare_exchange("ent1")
    for n in nodes:
        assert connect(n).list_exchanges() == ["ent1"]


def test_clustered_peer_down_fails_and_rolls_back(fleet_factory):
    nodes = fleet_factory(3, RoutingMode.CLUSTERED, peer_timeout=0.5)
    nodes[2].stop()
    c = connect(nodes[0])
    with pytest.raises(PeerTimeout):
        c.declare_exchange("ent1")
    assert c.list_exchanges() == []


def test_clustered_forwards_to_home(fleet_factory):
    n1, n2 = fleet_factory(2, RoutingMode.CLUSTERED)
    c1, c2 = connect(n1), connect(n2)
    c1.declare_exchange("pub")
    c2.declare_queue("sub")
    c1.bind("pub", "sub", "#")
    before = (n1.core.queues.get("sub"), c2.queue_stats("sub")["depth"])
    c1.publish("pub", "k", b"x")
    assert before == (None, 0)
    assert "sub" not in n1.core.queues
    assert c2.queue_stats("sub")["depth"] == 1
    # consume request at the non-home node is forwarded
    assert [m.payload for m in c1.consume("sub", 5)] == [b"x"]
    assert c2.queue_stats("sub")["depth"] == 0


def test_clustered_binding_routes_from_any_node(fleet_factory):
    nodes = fleet_factory(4, RoutingMode.CLUSTERED)
    c = [connect(n) for n in nodes]
    c[0].declare_exchange("pub")
    c[1].declare_queue("sub")
    c[3].bind("pub", "sub", "temp.#")
    c[2].publish("pub", "temp.a", b"1")
    c[2].publish("pub", "hum.a", b"2")
    assert [m.payload for m in c[0].consume("sub", 10)] == [b"1"]
    for ci in c:
        assert [b.queue for b in ci.list_bindings()] == ["sub"]
