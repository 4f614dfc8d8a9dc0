"""Length-prefixed framing for the broker wire protocol.

Every frame is::

    uint32 header_len | uint32 blob_len | header (UTF-8 JSON) | blob (raw bytes)

Requests carry ``{"verb": ..., "args": {...}, "as": principal}``; responses
carry ``{"ok": true, "result": ...}`` or ``{"ok": false, "error": kind,
"message": text}``. Message payloads travel in the blob, concatenated, with
their sizes listed in the header. The first frame on a connection must be an
``auth`` request.

Verbs: auth, ping, declare_exchange, declare_queue, delete_exchange,
delete_queue, bind, unbind, publish, publish_batch, enqueue, consume,
peek, ack, create_shovel, delete_shovel, list_shovels, list_bindings, list_exchanges,
list_queues, queue_stats, replicate.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

from .core import Message

FRAME_HEADER = struct.Struct(">II")
MAX_HEADER = 16 * 1024 * 1024
MAX_BLOB = 256 * 1024 * 1024


class ProtocolError(ConnectionError):
    pass


def encode_frame(header: dict, blob: bytes = b"") -> bytes:
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    return FRAME_HEADER.pack(len(head), len(blob)) + head + blob


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    data = stream.read(n)
    if data is None or len(data) != n:
        raise ProtocolError("connection closed mid-frame")
    return data


def read_frame(stream: BinaryIO) -> tuple[dict, bytes]:
    """Read one frame. Raises EOFError on a clean close between frames."""
    prefix = stream.read(FRAME_HEADER.size)
    if not prefix:
        raise EOFError
    if len(prefix) != FRAME_HEADER.size:
        raise ProtocolError("truncated frame prefix")
    head_len, blob_len = FRAME_HEADER.unpack(prefix)
    if head_len > MAX_HEADER or blob_len > MAX_BLOB:
        raise ProtocolError("frame too large")
    header = json.loads(_read_exact(stream, head_len))
    blob = _read_exact(stream, blob_len) if blob_len else b""
    return header, blob


def pack_messages(messages: list[Message]) -> tuple[list[dict], bytes]:
    metas = [
        {
            "exchange": m.exchange,
            "routing_key": m.routing_key,
            "timestamp": m.timestamp,
            "publisher": m.publisher,
            "size": len(m.payload),
        }
        for m in messages
    ]
    return metas, b"".join(m.payload for m in messages)


def unpack_messages(metas: list[dict], blob: bytes) -> list[Message]:
    out = []
    offset = 0
    view = memoryview(blob)
    for meta in metas:
        size = meta["size"]
        out.append(
            Message(
                meta["exchange"],
                meta["routing_key"],
                bytes(view[offset : offset + size]),
                meta.get("timestamp", 0),
                meta.get("publisher", ""),
            )
        )
        offset += size
    if offset != len(blob):
        raise ProtocolError("message sizes do not add up to the blob length")
    return out
