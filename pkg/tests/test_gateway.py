import threading
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import wait_for
from vermillion.deploy import LocalDeployment
from vermillion.errors import PoolExhausted
from vermillion.gateway import ChannelPool, GatewayClient, GatewayConfig, LocalGatewayClient, flatten, search
from vermillion.loadgen import drain, expect, provision
from vermillion.router import NodeDescriptor, RoutingMode, compute_bucket


class FakeChannel:
    def __init__(self):
        self.broken = False
        self.closed = False

    def close(self):
        self.closed = True


def fake_pool(**kw):
    node = NodeDescriptor("n1", "127.0.0.1", 1, 1)
    return ChannelPool(lambda n: FakeChannel(), lambda nid: node, **kw)


def test_pool_reuses_released_channel():
    pool = fake_pool()
    ch = pool.acquire_channel("n1")
    pool.release_channel("n1", ch)
    assert pool.acquire_channel("n1") is ch
    assert pool.stats()["n1"]["created"] == 1
    assert pool.stats()["n1"]["reused"] == 1


def test_pool_exhaustion_times_out():
    pool = fake_pool(max_per_node=2, timeout=0.05)
    held = [pool.acquire_channel("n1"), pool.acquire_channel("n1")]
    with pytest.raises(PoolExhausted):
        pool.acquire_channel("n1")
    pool.release_channel("n1", held[0])
    assert pool.acquire_channel("n1") is held[0]


def test_pool_waiter_gets_released_channel():
    pool = fake_pool(max_per_node=1, timeout=2)
    ch = pool.acquire_channel("n1")
    got = []
    t = threading.Thread(target=lambda: got.append(pool.acquire_channel("n1")))
    t.start()
    pool.release_channel("n1", ch)
    t.join()
    assert got == [ch]


def test_pool_discards_broken_channels():
    pool = fake_pool()
    ch = pool.acquire_channel("n1")
    ch.broken = True
    pool.release_channel("n1", ch)
    assert ch.closed
    assert pool.acquire_channel("n1") is not ch
    assert pool.stats()["n1"]["created"] == 2


def test_unpooled_mode_never_reuses():
    pool = fake_pool(pooled=False)
    for _ in range(3):
        ch = pool.acquire_channel("n1")
        pool.release_channel("n1", ch)
        assert ch.closed
    assert pool.stats()["n1"]["created"] == 3


@settings(max_examples=60, deadline=None)
@given(st.lists(st.booleans(), max_size=60), st.integers(1, 4))
def test_pool_bookkeeping_invariant(ops, cap):
    pool = fake_pool(max_per_node=cap, timeout=0)
    leased = []
    for acquire in ops:
        if acquire:
            try:
                leased.append(pool.acquire_channel("n1"))
            except PoolExhausted:
                assert len(leased) == cap
        elif leased:
            pool.release_channel("n1", leased.pop())
        s = pool.stats().get("n1", {"leased": 0, "free": 0})
        assert s["leased"] == len(leased)
        assert s["leased"] + s["free"] <= cap
        free = set(map(id, pool._nodes["n1"].free)) if "n1" in pool._nodes else set()
        assert not free & set(map(id, leased))


def test_flatten():
    assert flatten({"a": {"b": 1}, "c": [2, {"d": 3}], "e": {}}) == {"a.b": 1, "c.0": 2, "c.1.d": 3, "e": {}}


CATALOGUE = [
    {"entity_id": "f1", "owner": "pune", "kind": "publisher",
     "catalogue_item": {"type": "flood", "location": {"latitude": 18.5, "longitude": 73.8}}},
    {"entity_id": "f2", "owner": "pune", "kind": "publisher",
     "catalogue_item": {"type": "air", "location": {"latitude": 18.6, "longitude": 73.9}}},
    {"entity_id": "b1", "owner": "blr", "kind": "publisher",
     "catalogue_item": {"type": "flood", "location": {"lat": 12.97, "lon": 77.59}}},
    {"entity_id": "s1", "owner": "blr", "kind": "subscriber", "catalogue_item": {}},
]


@pytest.mark.parametrize(
    "filters, ids",
    [
        ({}, ["b1", "f1", "f2", "s1"]),
        ({"type": "flood"}, ["b1", "f1"]),
        ({"type": "flood", "provider": "pune"}, ["f1"]),
        ({"bounds": "18,73,19,74"}, ["f1", "f2"]),
        ({"bounds": "12,77,13,78", "type": "flood"}, ["b1"]),
        ({"kind": "subscriber"}, ["s1"]),
        ({"location.latitude": "18.5"}, ["f1"]),
        ({"type": "water"}, []),
    ],
)
def test_catalogue_search(filters, ids):
    assert [e["entity_id"] for e in search(CATALOGUE, filters)] == ids


# -- through a live fleet -------------------------------------------------------


@pytest.fixture
def single():
    with LocalDeployment(nodes=1, mode=RoutingMode.SINGLE) as d:
        yield d


@pytest.fixture
def pair():
    with LocalDeployment(nodes=2) as d:
        yield d


def test_happy_path_http(single):
    c = GatewayClient(single.gateway_url)
    ch = provision(c, single.admin_key, "pune", "flood1", "blr", "app1", bind=False)
    expect(c.publish(ch.publisher_key, {"n": -1}), "pre-bind publish")
    expect(c.bind(ch.subscriber_key, "flood1"), "bind")
    for i in range(3):
        expect(c.publish(ch.publisher_key, {"n": i}, routing_key="level"), "publish")
    got = drain(c, ch.subscriber_key)
    assert [m["data"] for m in got] == [{"n": 0}, {"n": 1}, {"n": 2}]
    assert {m["from"] for m in got} == {"flood1"} and got[0]["routing_key"] == "level"


def test_status_codes(single):
    c = LocalGatewayClient(single.gateways[0])
    admin = single.admin_key
    assert c.register_provider("not-a-key", "p")[0] == 401
    assert c.register_provider(None, "p")[0] == 401
    pkey = c.register_provider(admin, "p")[1]["apikey"]
    assert c.register_provider(pkey, "q")[0] == 403
    assert c.register_provider(admin, "p")[0] == 409
    assert c.register_entity("bogus", "e", "publisher")[0] == 401
    assert c.register_entity(pkey, "e", "gizmo")[0] == 400
    pub = c.register_entity(pkey, "e", "publisher")[1]["apikey"]
    sub = c.register_entity(pkey, "s", "subscriber")[1]["apikey"]
    assert c.register_entity(pkey, "e", "publisher")[0] == 409
    assert c.request("POST", "/entity/publish", pub, {})[0] == 400
    assert c.publish(sub, 1)[0] == 403
    assert c.publish(pub, "x" * (2 * 1024 * 1024))[0] == 413
    assert c.follow(sub, "ghost")[0] == 404
    assert c.bind(sub, "e")[0] == 403
    assert c.unbind(sub, "e")[0] == 404
    assert c.request("GET", "/nowhere")[0] == 404
    assert c.request("GET", "/entity/publish", pub)[0] == 405
    assert c.request("GET", "/entity/subscribe", sub, query={"max_messages": 0})[0] == 400
    assert c.request("GET", "/entity/subscribe", sub, query={"max_messages": "x"})[0] == 400


def test_bad_json_body_is_400(single):
    import http.client

    host, port = single.gateway_url.split("//")[1].split(":")
    conn = http.client.HTTPConnection(host, int(port))
    conn.request("POST", "/entity/follow", "{nope", {"apikey": "k"})
    assert conn.getresponse().status == 400


def test_reject_path_forbids_bind(single):
    c = LocalGatewayClient(single.gateways[0])
    pkey = expect(c.register_provider(single.admin_key, "pune"), "provider")["apikey"]
    expect(c.register_entity(pkey, "flood1", "publisher"), "publisher")
    sub = expect(c.register_entity(pkey, "app1", "subscriber"), "subscriber")["apikey"]
    fid = expect(c.follow(sub, "flood1"), "follow")["follow_id"]
    assert c.follow_requests(pkey)[1]["requests"][0]["follow_id"] == fid
    expect(c.reject_follow(pkey, fid), "reject")
    assert c.follow_status(sub, fid)[1]["status"] == "rejected"
    assert c.follow_requests(pkey)[1]["requests"] == []
    assert c.bind(sub, "flood1")[0] == 403
    assert c.share(pkey, fid)[0] == 409


def test_pool_exhaustion_is_429():
    config = GatewayConfig(max_per_node=1, pool_timeout=0.05)
    with LocalDeployment(nodes=1, gateway_config=config) as d:
        c = LocalGatewayClient(d.gateways[0])
        ch = provision(c, d.admin_key, "pune", "flood1", "blr", "app1")
        gw = d.gateways[0]
        held = gw.pool.acquire_channel("n1")
        try:
            assert c.publish(ch.publisher_key, 1)[0] == 429
        finally:
            gw.pool.release_channel("n1", held)
        assert c.publish(ch.publisher_key, 1)[0] == 200


def _shovels(d):
    out = []
    for n in d.registry.nodes():
        with d.broker_client(n.node_id) as b:
            out += b.list_shovels()
    return out


def test_cross_bucket_bind_creates_one_shovel_and_unbind_removes_it(pair):
    assert compute_bucket("alpha", 2) != compute_bucket("bravo", 2)
    c = LocalGatewayClient(pair.gateways[0])
    ch = provision(c, pair.admin_key, "alpha", "flood1", "bravo", "app1")
    assert ch.publisher_node != ch.subscriber_node
    assert len(_shovels(pair)) == 1
    expect(c.unbind(ch.subscriber_key, "flood1"), "unbind")
    assert _shovels(pair) == []
    expect(c.publish(ch.publisher_key, 1), "publish")
    assert drain(c, ch.subscriber_key) == []


def test_subscribers_on_one_node_share_a_shovel(pair):
    c = LocalGatewayClient(pair.gateways[0])
    keys = {}
    a = provision(c, pair.admin_key, "alpha", "flood1", "bravo", "app1", provider_keys=keys)
    b_key = expect(c.register_entity(keys["bravo"], "app2", "subscriber"), "register")["apikey"]
    fid = expect(c.follow(b_key, "flood1"), "follow")["follow_id"]
    expect(c.share(keys["alpha"], fid), "share")
    expect(c.bind(b_key, "flood1"), "bind")
    assert len(_shovels(pair)) == 1
    expect(c.publish(a.publisher_key, "m"), "publish")
    seen = Counter()

    def both_received():
        for k in (a.subscriber_key, b_key):
            seen[k] += len(drain(c, k))
        return len(seen) == 2 and all(seen.values())

    assert wait_for(both_received)
    expect(c.unbind(a.subscriber_key, "flood1"), "unbind")
    assert len(_shovels(pair)) == 1
    expect(c.unbind(b_key, "flood1"), "unbind")
    assert _shovels(pair) == []


def test_delivery_equivalence_same_vs_cross_bucket(pair):
    c = LocalGatewayClient(pair.gateways[0])
    keys = {}
    local = provision(c, pair.admin_key, "alpha", "pubA", "aardvark", "subA", provider_keys=keys)
    remote = provision(c, pair.admin_key, "alpha", "pubB", "bravo", "subB", provider_keys=keys)
    assert local.publisher_node == local.subscriber_node
    assert remote.publisher_node != remote.subscriber_node
    payloads = [{"k": i % 7, "i": i} for i in range(200)]
    for p in payloads:
        expect(c.publish(local.publisher_key, p), "publish")
        expect(c.publish(remote.publisher_key, p), "publish")
    got = {"a": [], "b": []}

    def done():
        got["a"] += drain(c, local.subscriber_key)
        got["b"] += drain(c, remote.subscriber_key)
        return len(got["b"]) >= len(payloads)

    assert wait_for(done)
    assert [m["data"] for m in got["a"]] == payloads
    assert [m["data"] for m in got["b"]] == payloads


def test_replicas_are_interchangeable():
    with LocalDeployment(nodes=2, gateways=2) as d:
        clients = [GatewayClient(u) for u in d.gateway_urls]
        ch = provision(clients[0], d.admin_key, "alpha", "flood1", "bravo", "app1", bind=False)
        expect(clients[1].bind(ch.subscriber_key, "flood1"), "bind on replica")
        for i in range(10):
            expect(clients[i % 2].publish(ch.publisher_key, i), "publish")
        got = []
        assert wait_for(lambda: got.extend(drain(clients[len(got) % 2], ch.subscriber_key)) or len(got) == 10)
        assert [m["data"] for m in got] == list(range(10))


def test_channel_reuse_under_steady_loop(single):
    c = LocalGatewayClient(single.gateways[0])
    ch = provision(c, single.admin_key, "pune", "flood1", "blr", "app1")
    for i in range(300):
        expect(c.publish(ch.publisher_key, i), "publish")
    gw = single.gateways[0]
    assert gw.pool.created() <= gw.config.max_per_node


def test_clustered_workflow():
    with LocalDeployment(nodes=3, mode=RoutingMode.CLUSTERED) as d:
        c = LocalGatewayClient(d.gateways[0])
        ch = provision(c, d.admin_key, "alpha", "flood1", "bravo", "app1")
        for i in range(20):
            expect(c.publish(ch.publisher_key, i), "publish")
        got = []
        for _ in range(6):
            got += drain(c, ch.subscriber_key)
        assert [m["data"] for m in got] == list(range(20))
        assert _shovels(d) == []
