"""Write throughput reports as JSON, CSV and PNG figures."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .model import ThroughputReport  # noqa: E402

CSV_FIELDS = [
    "label",
    "mode",
    "producers",
    "messages_per_producer",
    "consumers",
    "payload_bytes",
    "node_count",
    "requests_ok",
    "requests_failed",
    "wall_seconds",
    "throughput",
    "median_window_rate",
    "median_latency_ms",
    "p99_latency_ms",
    "messages_expected",
    "messages_received",
    "transport",
]

PathLike = Union[str, Path]


def _row(report: ThroughputReport) -> dict:
    d = report.to_dict()
    flat = {**d["profile"], **{k: v for k, v in d.items() if k != "profile"}}
    return {k: flat[k] for k in CSV_FIELDS}


def _clean(value):
    """JSON has no NaN/inf; write them as null."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def write_json(path: PathLike, doc) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True))
    return path


def write_csv(path: PathLike, reports: Sequence[ThroughputReport]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for r in reports:
            writer.writerow(_row(r))
    return path


def plot_run(path: PathLike, report: ThroughputReport) -> Path:
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=False)
    rates = report.window_rates
    width = report.profile["window"]
    ax1.plot([i * width for i in range(len(rates))], rates, marker="o")
    ax1.set_ylabel("publishes / s")
    ax1.set_title(f"{report.label or report.mode}: throughput per window (after warm-up)")
    if report.concurrency:
        ts, active = zip(*report.concurrency)
        ax2.step(ts, active, where="post")
    ax2.set_xlabel("seconds since start")
    ax2.set_ylabel("active producers")
    fig.tight_layout()
    return _save(fig, path)


def plot_comparison(path: PathLike, comparison: dict) -> Path:
    rows = comparison["rows"]
    fig, ax = plt.subplots(figsize=(7, 4))
    xs = range(len(rows))
    ax.bar([x - 0.2 for x in xs], [r["federated"] for r in rows], width=0.4, label="federated")
    ax.bar([x + 0.2 for x in xs], [r["clustered"] for r in rows], width=0.4, label="clustered")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([f"pair {r['pair']}" for r in rows])
    ax.set_ylabel("median publishes / s")
    ax.set_title(f"federated vs clustered (median ratio {comparison['ratio']:.2f})")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_sweep(path: PathLike, reports: Sequence[ThroughputReport]) -> Path:
    by_size: dict[int, list[float]] = {}
    for r in reports:
        by_size.setdefault(r.profile["payload_bytes"], []).append(r.median_window_rate)
    sizes = sorted(by_size)
    fig, ax = plt.subplots(figsize=(7, 4))
    for s in sizes:
        ax.scatter([s] * len(by_size[s]), by_size[s], color="tab:blue", alpha=0.5)
    ax.plot(sizes, [sorted(by_size[s])[len(by_size[s]) // 2] for s in sizes], marker="o", color="tab:orange")
    ax.set_xscale("log")
    ax.set_xlabel("payload bytes")
    ax.set_ylabel("median publishes / s")
    ax.set_title("throughput by payload size")
    fig.tight_layout()
    return _save(fig, path)


def _save(fig, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def write_run(out_dir: PathLike, stem: str, report: ThroughputReport) -> list[Path]:
    out = Path(out_dir)
    return [
        write_json(out / f"{stem}.json", report.to_dict()),
        write_csv(out / f"{stem}.csv", [report]),
        plot_run(out / f"{stem}.png", report),
    ]


def write_comparison(out_dir: PathLike, stem: str, comparison: dict) -> list[Path]:
    out = Path(out_dir)
    doc = {k: v for k, v in comparison.items() if k != "reports"}
    doc["reports"] = [r.to_dict() for r in comparison["reports"]]
    return [
        write_json(out / f"{stem}.json", doc),
        write_csv(out / f"{stem}.csv", comparison["reports"]),
        plot_comparison(out / f"{stem}.png", comparison),
    ]


def write_sweep(out_dir: PathLike, stem: str, reports: Sequence[ThroughputReport]) -> list[Path]:
    out = Path(out_dir)
    return [
        write_json(out / f"{stem}.json", [r.to_dict() for r in reports]),
        write_csv(out / f"{stem}.csv", reports),
        plot_sweep(out / f"{stem}.png", reports),
    ]


def format_table(reports: Sequence[ThroughputReport]) -> str:
    """Pipe-delimited table for stdout."""
    cols = ["label", "mode", "producers", "consumers", "payload_bytes", "requests_ok", "requests_failed",
            "throughput", "median_window_rate", "median_latency_ms", "p99_latency_ms"]
    lines = ["|".join(cols)]
    for r in reports:
        row = _row(r)
        lines.append("|".join(f"{row[c]:.2f}" if isinstance(row[c], float) else str(row[c]) for c in cols))
    return "\n".join(lines)
