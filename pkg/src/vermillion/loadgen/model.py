"""Load profiles and throughput reports."""

from __future__ import annotations

import math
import statistics
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

from ..router import RoutingMode

DESK_MAX_PRODUCERS = 64
DESK_MAX_MESSAGES = 1000
FULL_SCALE_MESSAGES = 10_000
SMALL_PAYLOAD = 220
LARGE_PAYLOAD = 10 * 1024


@dataclass
class LoadProfile:
    producers: int = 1
    messages_per_producer: int = 100
    consumers: int = 0
    payload_bytes: int = SMALL_PAYLOAD
    mode: RoutingMode = RoutingMode.FEDERATED
    node_count: int = 1
    warmup: float = 5.0
    seed: int = 0
    consumer_factor: int = 1
    subscribe_batch: int = 100
    window: float = 1.0
    full_scale: bool = False

    def __post_init__(self):
        self.mode = RoutingMode.parse(self.mode)

    def validate(self) -> "LoadProfile":
        for name in ("producers", "messages_per_producer", "payload_bytes", "node_count", "consumer_factor",
                     "subscribe_batch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.consumers < 0:
            raise ValueError("consumers must be >= 0")
        if self.consumers > self.producers * self.consumer_factor:
            raise ValueError(f"consumers may not exceed producers x {self.consumer_factor}")
        if self.warmup < 0 or self.window <= 0:
            raise ValueError("warmup must be >= 0 and window > 0")
        if self.payload_bytes < 2:
            raise ValueError("payload_bytes must be at least 2 (a JSON string)")
        if not self.full_scale and (
            self.producers > DESK_MAX_PRODUCERS or self.messages_per_producer > DESK_MAX_MESSAGES
        ):
            raise ValueError(
                f"desk-scale limits are P <= {DESK_MAX_PRODUCERS}, M <= {DESK_MAX_MESSAGES}; "
                "set full_scale to lift them"
            )
        if self.mode is RoutingMode.SINGLE and self.node_count != 1:
            raise ValueError("single mode runs exactly one node")
        return self

    @property
    def total_requests(self) -> int:
        return self.producers * self.messages_per_producer

    def replace(self, **changes) -> "LoadProfile":
        doc = {f.name: getattr(self, f.name) for f in fields(self)}
        doc.update(changes)
        return LoadProfile(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d


@dataclass
class ThroughputReport:
    mode: str
    profile: dict
    wall_seconds: float
    total_seconds: float
    requests_ok: int
    requests_failed: int
    throughput: float
    median_window_rate: float
    median_latency_ms: float
    p99_latency_ms: float
    bucket_occupancy: dict[str, int]
    predicted_occupancy: dict[str, int]
    messages_expected: int = 0
    messages_received: int = 0
    failures_by_status: dict[str, int] = field(default_factory=dict)
    window_rates: list[float] = field(default_factory=list)
    concurrency: list[tuple[float, int]] = field(default_factory=list)
    warmup_applied: bool = True
    transport: str = "http"
    processes: bool = False
    label: str = ""

    @property
    def requests_issued(self) -> int:
        return self.requests_ok + self.requests_failed

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        return (
            f"{self.label or self.mode}: {self.requests_ok} ok / {self.requests_failed} failed, "
            f"{self.throughput:.1f} req/s (median window {self.median_window_rate:.1f}), "
            f"latency p50 {self.median_latency_ms:.2f} ms p99 {self.p99_latency_ms:.2f} ms"
        )


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile, ``q`` in [0, 100]; NaN for no data."""
    if not values:
        return math.nan
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100 * len(ordered)))
    return ordered[rank - 1]


def window_rates(times: Sequence[float], start: float, end: float, window: float) -> list[float]:
    """Completions per second in consecutive windows of [start, end).

    A trailing partial window is kept only when it is the sole window.
    """
    span = end - start
    if span <= 0:
        return []
    full = int(span // window)
    counts = [0] * (full + 1)
    for t in times:
        if start <= t <= end:
            counts[min(int((t - start) // window), full)] += 1
    rates = [c / window for c in counts[:full]]
    tail = span - full * window
    if not rates and tail > 0:
        rates = [counts[full] / tail]
    return rates


def median_or_nan(values: Sequence[float]) -> float:
    return statistics.median(values) if values else math.nan
