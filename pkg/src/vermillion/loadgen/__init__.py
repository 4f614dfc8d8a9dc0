"""Benchmark harness: producers and consumers against a local fleet."""

from .model import LARGE_PAYLOAD, SMALL_PAYLOAD, LoadProfile, ThroughputReport, percentile, window_rates
from .runner import compare_modes, comparison_table, payload_sweep, provider_name, run_load
from .workflow import Channel, WorkflowError, drain, expect, provision

__all__ = [
    "LARGE_PAYLOAD",
    "SMALL_PAYLOAD",
    "Channel",
    "LoadProfile",
    "ThroughputReport",
    "WorkflowError",
    "compare_modes",
    "comparison_table",
    "drain",
    "expect",
    "payload_sweep",
    "percentile",
    "provider_name",
    "provision",
    "run_load",
    "window_rates",
]
