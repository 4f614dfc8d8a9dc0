"""Run load profiles against a local fleet and measure publish throughput.

Throughput counts completed ``/entity/publish`` requests per wall-second
across all producers, after the warm-up period. Subscribe calls made by
consumers are not counted.
"""

from __future__ import annotations

import logging
import random
import string
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from ..deploy import LocalDeployment
from ..gateway import GatewayClient, GatewayConfig
from ..router import RoutingMode, compute_bucket
from .model import LoadProfile, ThroughputReport, median_or_nan, percentile, window_rates
from .workflow import expect, register_entity, register_provider

log = logging.getLogger(__name__)

BENCH_BROKER_OPTIONS = {"archive_limit": 20_000}
DRAIN_TIMEOUT = 30.0


def provider_name(index: int, tag: str) -> str:
    """Provider ids whose first letters walk the alphabet, so every bucket gets used."""
    return f"{string.ascii_lowercase[index % 26]}{tag}p{index}"


@dataclass
class _Producer:
    key: str
    url: str
    count: int
    payload: str
    done_times: list[float] = field(default_factory=list)
    latencies: list[float] = field(default_factory=list)
    failures: Counter = field(default_factory=Counter)
    started: float = 0.0
    finished: float = 0.0

    def run(self, barrier: threading.Barrier) -> None:
        client = GatewayClient(self.url)
        data = self.payload
        barrier.wait()
        self.started = time.monotonic()
        for _ in range(self.count):
            sent = time.monotonic()
            try:
                status, _ = client.publish(self.key, data)
            except OSError:
                status = 0
                client.close()
            done = time.monotonic()
            if status == 200:
                self.done_times.append(done)
                self.latencies.append(done - sent)
            else:
                self.failures[str(status)] += 1
        self.finished = time.monotonic()
        client.close()


@dataclass
class _Consumer:
    key: str
    url: str
    batch: int
    received: int = 0
    target: Optional[int] = None

    def run(self, producers_done: threading.Event, barrier: threading.Barrier) -> None:
        client = GatewayClient(self.url)
        barrier.wait()
        idle_since: Optional[float] = None
        while True:
            try:
                status, body = client.subscribe(self.key, self.batch)
            except OSError:
                client.close()
                status, body = 0, {}
            got = len(body.get("messages", ())) if status == 200 else 0
            self.received += got
            if got:
                idle_since = None
                continue
            if producers_done.is_set():
                if self.target is not None and self.received >= self.target:
                    break
                now = time.monotonic()
                idle_since = idle_since or now
                if now - idle_since > DRAIN_TIMEOUT:
                    log.warning("consumer gave up at %d/%s", self.received, self.target)
                    break
            time.sleep(0.005)
        client.close()


def run_load(
    profile: LoadProfile,
    deployment: Optional[LocalDeployment] = None,
    subprocess: bool = False,
    gateway_config: Optional[GatewayConfig] = None,
    broker_options: Optional[dict] = None,
    label: str = "",
) -> ThroughputReport:
    """Provision, then run all producers (and consumers) concurrently.

    Without a *deployment* a fresh fleet matching the profile is started and
    torn down afterwards.
    """
    profile.validate()
    own = deployment is None
    if own:
        deployment = LocalDeployment(
            nodes=profile.node_count,
            mode=profile.mode,
            subprocess=subprocess,
            gateway_config=gateway_config,
            broker_options=broker_options if broker_options is not None else BENCH_BROKER_OPTIONS,
        ).start()
    try:
        return _run(profile, deployment, label)
    finally:
        if own:
            deployment.stop()


def _run(profile: LoadProfile, deployment: LocalDeployment, label: str) -> ThroughputReport:
    rng = random.Random(profile.seed)
    tag = f"{rng.randrange(36**4):04x}"
    urls = deployment.gateway_urls
    admin = GatewayClient(urls[0])
    keys: dict[str, str] = {}
    producers: list[_Producer] = []
    consumers: list[_Consumer] = []
    occupancy: Counter = Counter()
    predicted: Counter = Counter()
    node_ids = [n.node_id for n in deployment.registry.nodes()]
    payload = "x" * (profile.payload_bytes - 2)  # JSON string quotes make up the rest

    for i in range(profile.producers):
        provider = provider_name(i, tag)
        keys[provider] = register_provider(admin, deployment.admin_key, provider)
        if profile.mode is RoutingMode.FEDERATED:
            predicted[node_ids[compute_bucket(provider, len(node_ids)) - 1]] += 1
    for i in range(profile.producers):
        provider = provider_name(i, tag)
        pub_key, node = register_entity(admin, keys[provider], f"pub-{tag}-{i}", "publisher")
        occupancy[node] += 1
        producers.append(_Producer(pub_key, urls[i % len(urls)], profile.messages_per_producer, payload))
    for j in range(profile.consumers):
        i = j % profile.producers
        provider = provider_name(i, tag)
        sub_key = _subscriber(admin, keys[provider], f"pub-{tag}-{i}", f"sub-{tag}-{j}")
        consumers.append(_Consumer(sub_key, urls[j % len(urls)], profile.subscribe_batch))
    admin.close()

    barrier = threading.Barrier(len(producers) + len(consumers) + 1)
    producers_done = threading.Event()
    p_threads = [threading.Thread(target=p.run, args=(barrier,), daemon=True) for p in producers]
    c_threads = [threading.Thread(target=c.run, args=(producers_done, barrier), daemon=True) for c in consumers]
    for t in p_threads + c_threads:
        t.start()
    barrier.wait()
    t0 = time.monotonic()
    for t in p_threads:
        t.join()
    t_end = max((p.finished for p in producers), default=t0)
    for j, c in enumerate(consumers):
        c.target = len(producers[j % profile.producers].done_times)
    producers_done.set()
    for t in c_threads:
        t.join()

    return _report(profile, producers, consumers, t0, t_end, occupancy, predicted, label,
                   https=any(u.startswith("https") for u in urls), processes=deployment.use_subprocess)


def _subscriber(client, provider_key: str, publisher: str, subscriber: str) -> str:
    """Register a subscriber under the publisher's provider and bind it to the publisher."""
    sub_key, _ = register_entity(client, provider_key, subscriber, "subscriber")
    follow_id = expect(client.follow(sub_key, publisher), "follow")["follow_id"]
    expect(client.share(provider_key, follow_id), "share")
    expect(client.bind(sub_key, publisher), "bind")
    return sub_key


def _report(profile, producers, consumers, t0, t_end, occupancy, predicted, label, https, processes):
    times = sorted(t for p in producers for t in p.done_times)
    latencies = [x for p in producers for x in p.latencies]
    failures: Counter = Counter()
    for p in producers:
        failures.update(p.failures)
    ok = len(times)
    start = t0 + profile.warmup
    warmup_applied = bool(times) and times[-1] > start and profile.warmup > 0
    if not warmup_applied:
        start = t0
    measured = [t for t in times if t >= start]
    end = times[-1] if times else t_end
    span = max(end - start, 1e-9)
    rates = window_rates(measured, start, end, profile.window)
    concurrency = []
    t = t0
    while t <= t_end:
        concurrency.append((round(t - t0, 3), sum(1 for p in producers if p.started <= t < p.finished)))
        t += profile.window
    return ThroughputReport(
        mode=profile.mode.value,
        profile=profile.to_dict(),
        wall_seconds=span,
        total_seconds=t_end - t0,
        requests_ok=ok,
        requests_failed=sum(failures.values()),
        throughput=len(measured) / span if measured else 0.0,
        median_window_rate=median_or_nan(rates) if rates else 0.0,
        median_latency_ms=percentile(latencies, 50) * 1000,
        p99_latency_ms=percentile(latencies, 99) * 1000,
        bucket_occupancy=dict(sorted(occupancy.items())),
        predicted_occupancy=dict(sorted(predicted.items())),
        messages_expected=sum(c.target or 0 for c in consumers),
        messages_received=sum(c.received for c in consumers),
        failures_by_status=dict(failures),
        window_rates=rates,
        concurrency=concurrency,
        warmup_applied=warmup_applied,
        transport="https" if https else "http",
        processes=processes,
        label=label,
    )


def compare_modes(
    profile: LoadProfile,
    pairs: int = 1,
    subprocess: bool = False,
    progress: Optional[Callable[[ThroughputReport], None]] = None,
    **kwargs,
) -> dict:
    """Run FEDERATED then CLUSTERED with the same profile, *pairs* times."""
    rows = []
    for k in range(pairs):
        pair = {}
        for mode in (RoutingMode.FEDERATED, RoutingMode.CLUSTERED):
            report = run_load(profile.replace(mode=mode, seed=profile.seed + k), subprocess=subprocess,
                              label=f"{mode.value}#{k + 1}", **kwargs)
            if progress:
                progress(report)
            pair[mode.value] = report
        rows.append(pair)
    return comparison_table(rows)


def comparison_table(rows: Sequence[dict]) -> dict:
    table = []
    for k, pair in enumerate(rows):
        fed, clu = pair["federated"], pair["clustered"]
        table.append({
            "pair": k + 1,
            "federated": fed.median_window_rate,
            "clustered": clu.median_window_rate,
            "federated_mean": fed.throughput,
            "clustered_mean": clu.throughput,
            "ratio": fed.median_window_rate / clu.median_window_rate if clu.median_window_rate else float("inf"),
        })
    fed_median = median_or_nan([r["federated"] for r in table])
    clu_median = median_or_nan([r["clustered"] for r in table])
    return {
        "rows": table,
        "reports": [r for pair in rows for r in pair.values()],
        "federated_median": fed_median,
        "clustered_median": clu_median,
        "ratio": fed_median / clu_median if clu_median else float("inf"),
        "federated_wins": sum(1 for r in table if r["federated"] > r["clustered"]),
    }


def payload_sweep(
    profile: LoadProfile,
    sizes: Sequence[int],
    subprocess: bool = False,
    repeats: int = 1,
    progress: Optional[Callable[[ThroughputReport], None]] = None,
    **kwargs,
) -> list[ThroughputReport]:
    """One report per size (per repeat); sizes are run interleaved across repeats."""
    reports = []
    for k in range(repeats):
        for size in sizes:
            report = run_load(profile.replace(payload_bytes=size, seed=profile.seed + k), subprocess=subprocess,
                              label=f"{size}B#{k + 1}", **kwargs)
            if progress:
                progress(report)
            reports.append(report)
    return reports
