"""Routing-key patterns.

Keys and patterns are dot-separated segments. A pattern matches a key
segment-for-segment, except that a trailing ``#`` matches zero or more
remaining segments. ``#`` anywhere else is rejected.
"""

from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple

from ..errors import InvalidArgument


class Pattern(NamedTuple):
    segments: tuple[str, ...]
    wildcard: bool


@lru_cache(maxsize=4096)
def parse_pattern(pattern: str) -> Pattern:
    if not pattern:
        raise InvalidArgument("routing pattern must be non-empty")
    parts = pattern.split(".")
    wildcard = parts[-1] == "#"
    if wildcard:
        parts = parts[:-1]
    if "#" in parts:
        raise InvalidArgument(f"'#' is only allowed as the last segment: {pattern!r}")
    if any(p == "" for p in parts):
        raise InvalidArgument(f"empty segment in pattern {pattern!r}")
    return Pattern(tuple(parts), wildcard)


def validate_key(routing_key: str) -> str:
    if not routing_key:
        raise InvalidArgument("routing key must be non-empty")
    if "#" in routing_key.split("."):
        raise InvalidArgument("routing key may not contain '#' segments")
    return routing_key


def matches(pattern: str, routing_key: str) -> bool:
    pat = parse_pattern(pattern)
    key = routing_key.split(".")
    n = len(pat.segments)
    if pat.wildcard:
        return len(key) >= n and tuple(key[:n]) == pat.segments
    return tuple(key) == pat.segments


def covers(outer: str, inner: str) -> bool:
    """True when every key matched by *inner* is also matched by *outer*."""
    o = parse_pattern(outer)
    i = parse_pattern(inner)
    n = len(o.segments)
    if not o.wildcard:
        return not i.wildcard and i.segments == o.segments
    return len(i.segments) >= n and i.segments[:n] == o.segments
