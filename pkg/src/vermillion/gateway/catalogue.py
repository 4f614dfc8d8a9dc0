"""Catalogue search for ``GET /cat``.

Query parameters are conjunctive equality filters on flattened catalogue keys
(``location.city=pune``), plus a few reserved ones:

``bounds``
    ``min_lat,min_lon,max_lat,max_lon``; keeps items whose latitude/longitude
    keys fall inside the rectangle (inclusive).
``provider`` / ``owner``
    the owning provider id.
``kind``
    ``publisher`` or ``subscriber``.
``entity_id``
    a single entity.
"""

from __future__ import annotations

from typing import Any, Iterable, Mapping, Optional

from ..errors import InvalidArgument

LAT_KEYS = {"latitude", "lat"}
LON_KEYS = {"longitude", "lon", "lng"}


def flatten(doc: Any, prefix: str = "") -> dict[str, Any]:
    """``{"a": {"b": 1}, "c": [2, 3]}`` -> ``{"a.b": 1, "c.0": 2, "c.1": 3}``."""
    out: dict[str, Any] = {}
    if isinstance(doc, dict):
        items = doc.items()
    elif isinstance(doc, list):
        items = ((str(i), v) for i, v in enumerate(doc))
    else:
        return {prefix: doc} if prefix else {}
    for k, v in items:
        key = f"{prefix}.{k}" if prefix else str(k)
        if isinstance(v, (dict, list)) and v:
            out.update(flatten(v, key))
        else:
            out[key] = v
    return out


def _text(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_bounds(text: str) -> tuple[float, float, float, float]:
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError:
        raise InvalidArgument(f"bounds must be four numbers, got {text!r}") from None
    if len(parts) != 4:
        raise InvalidArgument("bounds must be min_lat,min_lon,max_lat,max_lon")
    min_lat, min_lon, max_lat, max_lon = parts
    if min_lat > max_lat or min_lon > max_lon:
        raise InvalidArgument("bounds minimum exceeds maximum")
    return min_lat, min_lon, max_lat, max_lon


def _coordinate(flat: Mapping[str, Any], names: set[str]) -> Optional[float]:
    for key, value in flat.items():
        if key.rsplit(".", 1)[-1].lower() in names:
            try:
                return float(value)
            except (TypeError, ValueError):
                return None
    return None


def matches(entry: Mapping[str, Any], filters: Mapping[str, str]) -> bool:
    """*entry* is a public entity document: entity_id, owner, kind, catalogue_item."""
    flat = flatten(entry.get("catalogue_item") or {})
    for key, wanted in filters.items():
        if key == "bounds":
            min_lat, min_lon, max_lat, max_lon = parse_bounds(wanted)
            lat, lon = _coordinate(flat, LAT_KEYS), _coordinate(flat, LON_KEYS)
            if lat is None or lon is None or not (min_lat <= lat <= max_lat and min_lon <= lon <= max_lon):
                return False
        elif key in ("provider", "owner"):
            if entry.get("owner") != wanted:
                return False
        elif key in ("kind", "entity_id"):
            if _text(entry.get(key)) != wanted:
                return False
        elif key not in flat or _text(flat[key]) != wanted:
            return False
    return True


def search(entries: Iterable[Mapping[str, Any]], filters: Mapping[str, str]) -> list[dict]:
    if "bounds" in filters:
        parse_bounds(filters["bounds"])
    hits = [dict(e) for e in entries if matches(e, filters)]
    return sorted(hits, key=lambda e: e["entity_id"])
