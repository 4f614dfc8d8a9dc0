import string
import threading
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from vermillion.errors import Conflict, InvalidArgument, NodeUnavailable, NotFound
from vermillion.router import (
    NodeDescriptor,
    NodeRegistry,
    Router,
    RoutingMode,
    compute_bucket,
    dump_topology,
    load_topology,
)


def letter_oracle(name: str, nodes: int) -> int:
    # position in the alphabet string, independent of ord() arithmetic
    k = string.ascii_lowercase.index(name[0].lower()) + 1
    return (k % nodes) + 1


def make_registry(n: int) -> NodeRegistry:
    return NodeRegistry(NodeDescriptor(f"n{i}", "127.0.0.1", 9000 + i, i) for i in range(1, n + 1))


@pytest.mark.parametrize(
    "name, nodes, expected",
    [("alice", 1, 1), ("alice", 2, 2), ("zulu", 4, 3)],
)
def test_compute_bucket_examples(name, nodes, expected):
    assert compute_bucket(name, nodes) == expected
    assert compute_bucket(name.encode(), nodes) == expected


def test_compute_bucket_matches_oracle_for_all_letters():
    for c in string.ascii_letters:
        for n in range(1, 17):
            assert compute_bucket(c + "x", n) == letter_oracle(c, n)


def test_empty_username_rejected():
    with pytest.raises(InvalidArgument):
        compute_bucket("", 3)
    with pytest.raises(InvalidArgument):
        compute_bucket("a", 0)


def test_two_nodes_split_13_13():
    counts = Counter(compute_bucket(c, 2) for c in string.ascii_lowercase)
    assert counts == {1: 13, 2: 13}
    for i, c in enumerate(string.ascii_lowercase, start=1):
        assert compute_bucket(c, 2) == (2 if i % 2 else 1)


def test_26_nodes_bijective():
    assert sorted(compute_bucket(c, 26) for c in string.ascii_lowercase) == list(range(1, 27))


@given(st.text(min_size=1), st.integers(min_value=1, max_value=64))
def test_bucket_always_in_range(name, nodes):
    assert 1 <= compute_bucket(name, nodes) <= nodes


@given(st.sampled_from(string.ascii_letters), st.text(), st.text(), st.integers(1, 16))
def test_case_and_suffix_independent(first, s1, s2, nodes):
    assert compute_bucket(first + s1, nodes) == compute_bucket(first.swapcase() + s2, nodes)


def test_non_letters_land_in_range():
    for ch in "0123456789_-.~@!":
        for n in range(1, 17):
            assert 1 <= compute_bucket(ch + "id", n) <= n


def test_resolve_federated_uses_hash():
    router = Router(make_registry(2), RoutingMode.FEDERATED)
    assert router.resolve_node("alice").bucket == 2
    assert router.resolve_node("alice").bucket == 2
    assert router.resolve_node("bob").bucket == 1


def test_resolve_single():
    router = Router(make_registry(1), "single")
    assert router.resolve_node("anyone").node_id == "n1"


def test_single_requires_one_node():
    with pytest.raises(InvalidArgument):
        Router(make_registry(2), RoutingMode.SINGLE)


def test_resolve_clustered_round_robin():
    router = Router(make_registry(2), RoutingMode.CLUSTERED)
    assert [router.resolve_node("x").node_id for _ in range(4)] == ["n1", "n2", "n1", "n2"]


def test_clustered_cursor_is_atomic():
    router = Router(make_registry(4), RoutingMode.CLUSTERED)
    seen = Counter()
    lock = threading.Lock()

    def worker():
        local = Counter(router.resolve_node("x").node_id for _ in range(250))
        with lock:
            seen.update(local)

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert seen == {"n1": 500, "n2": 500, "n3": 500, "n4": 500}


def test_dead_node_is_unavailable():
    reg = make_registry(2)
    router = Router(reg, RoutingMode.FEDERATED)
    reg.set_alive("n2", False)
    with pytest.raises(NodeUnavailable):
        router.resolve_node("alice")
    assert router.resolve_node("bob").node_id == "n1"


def test_register_assigns_contiguous_buckets():
    reg = NodeRegistry()
    for i in range(4):
        reg.register_node(NodeDescriptor(f"n{i}", "h", 100 + i))
    assert sorted(n.bucket for n in reg.nodes()) == [1, 2, 3, 4]


def test_remove_renumbers():
    reg = make_registry(3)
    reg.remove_node("n2")
    assert [(n.node_id, n.bucket) for n in reg.nodes()] == [("n1", 1), ("n3", 2)]


def test_registry_errors():
    reg = make_registry(2)
    with pytest.raises(NotFound):
        reg.remove_node("nope")
    with pytest.raises(Conflict):
        reg.register_node(NodeDescriptor("n1", "other", 1))
    with pytest.raises(Conflict):
        reg.register_node(NodeDescriptor("n9", "127.0.0.1", 9001))


def test_pluggable_hash():
    router = Router(make_registry(3), RoutingMode.FEDERATED, hash_fn=lambda name, n: n)
    assert router.resolve_node("alice").bucket == 3


def test_topology_roundtrip(tmp_path, monkeypatch):
    path = tmp_path / "topo.json"
    dump_topology(path, make_registry(3).nodes(), RoutingMode.CLUSTERED)
    reg, mode = load_topology(path)
    assert mode is RoutingMode.CLUSTERED
    assert [n.bucket for n in reg.nodes()] == [1, 2, 3]
    monkeypatch.setenv("VERMILLION_MODE", "federated")
    assert load_topology(path)[1] is RoutingMode.FEDERATED


def test_topology_rejects_gapped_buckets(tmp_path):
    path = tmp_path / "topo.json"
    path.write_text('{"nodes": [{"node_id": "a", "port": 1, "bucket": 1}, {"node_id": "b", "port": 2, "bucket": 3}]}')
    with pytest.raises(InvalidArgument):
        load_topology(path)
