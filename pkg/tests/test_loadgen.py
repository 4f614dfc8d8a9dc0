import csv
import json
import math
import time

import pytest

from vermillion.cli import build_parser, main
from vermillion.deploy import LocalDeployment
from vermillion.gateway import GatewayClient
from vermillion.loadgen import (
    LoadProfile,
    comparison_table,
    drain,
    expect,
    payload_sweep,
    percentile,
    provider_name,
    provision,
    run_load,
    window_rates,
)
from vermillion.loadgen.report import format_table, write_comparison, write_run, write_sweep
from vermillion.router import RoutingMode, compute_bucket


def quick(**kw):
    base = dict(producers=1, messages_per_producer=100, consumers=0, warmup=0.0, window=0.2)
    base.update(kw)
    return LoadProfile(**base)


def test_percentile_nearest_rank():
    data = list(range(1, 101))
    assert percentile(data, 50) == 50
    assert percentile(data, 99) == 99
    assert percentile(data, 100) == 100
    assert percentile([7.0], 99) == 7.0
    assert math.isnan(percentile([], 50))


def test_window_rates():
    times = [0.1, 0.2, 0.5, 1.1, 1.2, 2.5]
    assert window_rates(times, 0.0, 2.5, 1.0) == [3.0, 2.0]
    assert window_rates([0.1, 0.2], 0.0, 0.4, 1.0) == [5.0]
    assert window_rates([], 1.0, 1.0, 1.0) == []


def test_profile_validation():
    with pytest.raises(ValueError):
        LoadProfile(producers=0).validate()
    with pytest.raises(ValueError):
        LoadProfile(producers=2, consumers=3).validate()
    assert LoadProfile(producers=2, consumers=4, consumer_factor=2).validate()
    with pytest.raises(ValueError):
        LoadProfile(producers=100).validate()
    assert LoadProfile(producers=100, full_scale=True).validate()
    with pytest.raises(ValueError):
        LoadProfile(mode="single", node_count=2).validate()


def test_provider_names_spread_first_letters():
    names = [provider_name(i, "t") for i in range(26)]
    assert sorted(n[0] for n in names) == [chr(c) for c in range(ord("a"), ord("z") + 1)]


def test_single_producer_count_conservation():
    report = run_load(quick())
    assert report.requests_ok == 100
    assert report.requests_failed == 0
    assert report.requests_issued == 100
    assert report.throughput > 0


def test_consumers_receive_everything():
    report = run_load(quick(producers=4, messages_per_producer=50, consumers=4))
    assert report.requests_ok == 200
    assert report.messages_expected == 200
    assert report.messages_received == 200


def test_extra_consumers_fan_out():
    report = run_load(quick(producers=2, messages_per_producer=20, consumers=4, consumer_factor=2))
    assert report.messages_received == report.messages_expected == 80


def test_federated_bucket_occupancy_matches_hash():
    profile = quick(producers=8, messages_per_producer=5, node_count=3)
    report = run_load(profile)
    assert report.bucket_occupancy == report.predicted_occupancy
    assert sum(report.bucket_occupancy.values()) == 8
    assert len(report.bucket_occupancy) == 3


def test_oversized_payload_fails_every_request():
    report = run_load(quick(messages_per_producer=5, payload_bytes=2 * 1024 * 1024))
    assert report.requests_ok == 0
    assert report.requests_failed == 5
    assert report.failures_by_status == {"413": 5}


def test_warmup_excludes_early_completions():
    report = run_load(quick(messages_per_producer=300, warmup=0.2))
    if report.warmup_applied:
        assert report.wall_seconds < report.total_seconds
    assert report.requests_ok == 300


def test_reports_are_schema_stable(tmp_path):
    a = run_load(quick(messages_per_producer=20))
    b = run_load(quick(messages_per_producer=30, consumers=1))
    assert a.to_dict().keys() == b.to_dict().keys()
    paths = write_run(tmp_path, "r", a)
    assert [p.suffix for p in paths] == [".json", ".csv", ".png"]
    assert json.loads(paths[0].read_text())["requests_ok"] == 20
    with paths[1].open() as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["requests_ok"] == "20"
    assert paths[2].stat().st_size > 0
    sweep = write_sweep(tmp_path, "s", [a, b])
    assert all(p.exists() for p in sweep)
    table = format_table([a, b])
    assert table.count("\n") == 2 and table.startswith("label|mode|")


def test_compare_modes_structure(tmp_path):
    fed = run_load(quick(messages_per_producer=20, node_count=2, mode="federated"))
    clu = run_load(quick(messages_per_producer=20, node_count=2, mode="clustered"))
    result = comparison_table([{"federated": fed, "clustered": clu}])
    assert result["rows"][0]["pair"] == 1
    assert result["ratio"] == pytest.approx(fed.median_window_rate / clu.median_window_rate)
    assert result["federated_wins"] in (0, 1)
    paths = write_comparison(tmp_path, "c", result)
    assert json.loads(paths[0].read_text())["rows"][0]["pair"] == 1


def test_payload_sweep_one_report_per_size():
    reports = payload_sweep(quick(messages_per_producer=10), [220, 1024, 4096])
    assert [r.profile["payload_bytes"] for r in reports] == [220, 1024, 4096]
    assert all(r.requests_ok == 10 for r in reports)


def test_clustered_occupancy_is_round_robin():
    report = run_load(quick(producers=4, messages_per_producer=5, node_count=2, mode="clustered"))
    assert report.predicted_occupancy == {}
    assert sorted(report.bucket_occupancy.values()) == [2, 2]


# -- CLI ----------------------------------------------------------------------------


def test_cli_parser_defaults():
    args = build_parser().parse_args(["compare", "-P", "4"])
    assert (args.nodes, args.pairs, args.producers, args.warmup) == (4, 5, 4, 5.0)
    args = build_parser().parse_args(["sweep", "--mode", "clustered"])
    assert args.mode is RoutingMode.CLUSTERED and args.sizes == "220,10240"


def test_cli_run_writes_outputs(tmp_path, capsys):
    rc = main(["--log-level", "WARNING", "run", "--in-process", "-P", "2", "-M", "10", "--warmup", "0",
               "--out", str(tmp_path), "--label", "smoke"])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("label|")
    assert {p.name for p in tmp_path.iterdir()} == {"smoke.json", "smoke.csv", "smoke.png"}


def test_subprocess_fleet_end_to_end():
    with LocalDeployment(nodes=2, subprocess=True) as d:
        c = GatewayClient(d.gateway_url)
        assert compute_bucket("alpha", 2) != compute_bucket("bravo", 2)
        ch = provision(c, d.admin_key, "alpha", "flood1", "bravo", "app1")
        for i in range(20):
            expect(c.publish(ch.publisher_key, i), "publish")
        got = []
        deadline = time.monotonic() + 10
        while len(got) < 20 and time.monotonic() < deadline:
            got += drain(c, ch.subscriber_key)
            time.sleep(0.02)
        assert [m["data"] for m in got] == list(range(20))
        with d.broker_client("n2") as b:
            assert len(b.list_shovels()) == 1
        assert main(["--log-level", "WARNING", "daemons", "--topology", str(d.workdir / "topology.json"),
                     "--secret", d.secret, "--auth-url", d.auth_url, "--once"]) == 0
