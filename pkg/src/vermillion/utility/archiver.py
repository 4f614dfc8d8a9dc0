"""Drain every node's archive queue into an append-only NDJSON store.

Records land in ``{archive_dir}/{node_id}/{YYYY-MM-DD}.ndjson`` (UTC day of
``archived_at``). Each batch is peeked, appended and fsynced, and only then
acknowledged on the broker, so a crash can duplicate a batch but never lose
one. A single archiver per fleet is assumed.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import time
from contextlib import closing
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

from ..broker.core import Message
from ..errors import NodeUnavailable, PeerTimeout
from ..principals import ARCHIVE_QUEUE
from ..router import NodeDescriptor, NodeRegistry

log = logging.getLogger(__name__)

UNREACHABLE = (NodeUnavailable, PeerTimeout, OSError)


def archive_path(root: Union[str, Path], node_id: str, archived_at: float) -> Path:
    day = datetime.fromtimestamp(archived_at, tz=timezone.utc).strftime("%Y-%m-%d")
    return Path(root) / node_id / f"{day}.ndjson"


def to_record(message: Message, node_id: str, archived_at: float) -> dict:
    try:
        payload: dict = {"payload": message.payload.decode("utf-8")}
    except UnicodeDecodeError:
        payload = {"payload_b64": base64.b64encode(message.payload).decode()}
    return {
        "exchange": message.exchange,
        "routing_key": message.routing_key,
        "publisher": message.publisher,
        "timestamp": message.timestamp,
        **payload,
        "source_node": node_id,
        "archived_at": archived_at,
    }


def read_archive(root: Union[str, Path], node_id: Optional[str] = None) -> list[dict]:
    """All records under *root* (optionally one node), in file then line order."""
    base = Path(root)
    dirs = [base / node_id] if node_id else sorted(p for p in base.iterdir() if p.is_dir()) if base.exists() else []
    out = []
    for d in dirs:
        for f in sorted(d.glob("*.ndjson")):
            with f.open() as fh:
                out.extend(json.loads(line) for line in fh if line.strip())
    return out


class Archiver:
    def __init__(
        self,
        registry: NodeRegistry,
        archive_dir: Union[str, Path],
        connect: Callable[[NodeDescriptor], object],
        batch: int = 1000,
        clock: Callable[[], float] = time.time,
        fsync: bool = True,
    ):
        self.registry = registry
        self.archive_dir = Path(archive_dir)
        self.connect = connect
        self.batch = batch
        self.clock = clock
        self.fsync = fsync
        self._last: dict[str, float] = {}

    def _stamp(self, node_id: str) -> float:
        # archived_at never goes backwards for a node, even if the wall clock does
        t = max(self.clock(), self._last.get(node_id, float("-inf")))
        self._last[node_id] = t
        return t

    def append(self, node_id: str, messages: Iterable[Message]) -> int:
        at = self._stamp(node_id)
        path = archive_path(self.archive_dir, node_id, at)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps(to_record(m, node_id, at), separators=(",", ":")) + "\n" for m in messages]
        with path.open("a") as fh:
            fh.writelines(lines)
            if self.fsync:
                fh.flush()
                os.fsync(fh.fileno())
        return len(lines)

    def drain_node(self, node: NodeDescriptor) -> int:
        count = 0
        with closing(self.connect(node)) as ch:
            while True:
                messages = ch.peek(ARCHIVE_QUEUE, self.batch)
                if not messages:
                    break
                count += self.append(node.node_id, messages)
                ch.ack(ARCHIVE_QUEUE, len(messages))
                if len(messages) < self.batch:
                    break
        return count

    def tick(self) -> int:
        total = 0
        for node in self.registry.nodes():
            try:
                n = self.drain_node(node)
            except UNREACHABLE as exc:
                log.warning("archiver: skipping %s: %s", node.node_id, exc)
                continue
            total += n
        log.info("archiver: archived %d records", total)
        return total


def archiver_tick(archiver: Archiver) -> int:
    return archiver.tick()
