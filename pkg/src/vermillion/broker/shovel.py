"""Background relay moving messages from a local queue to a peer's exchange."""

from __future__ import annotations

import logging
import threading
from dataclasses import replace
from typing import Callable, Optional

from ..errors import VermillionError
from .client import BrokerClient
from .core import BrokerCore, Shovel

log = logging.getLogger(__name__)


class ShovelRelay(threading.Thread):
    """Pull-based relay.

    Messages are peeked, republished to the destination as one batch, and only
    then dropped from the source queue, so a failed hop loses nothing and the
    order is preserved. After ``max_failures`` consecutive failed hops the
    shovel is marked inactive and the relay exits.
    """

    def __init__(
        self,
        core: BrokerCore,
        shovel: Shovel,
        connect: Callable[[str], BrokerClient],
        batch: int = 100,
        idle: float = 0.01,
        max_failures: int = 5,
        backoff: float = 0.05,
    ):
        super().__init__(name=f"shovel-{shovel.shovel_id}", daemon=True)
        self.core = core
        self.shovel = shovel
        self.connect = connect
        self.batch = batch
        self.idle = idle
        self.max_failures = max_failures
        self.backoff = backoff
        self._stop_event = threading.Event()

    def stop(self, timeout: float = 2.0) -> None:
        self._stop_event.set()
        if self.is_alive() and threading.current_thread() is not self:
            self.join(timeout)

    def run(self) -> None:
        source = self.core.queues.get(self.shovel.source_queue)
        if source is None:
            self.shovel.active = False
            return
        client: Optional[BrokerClient] = None
        failures = 0
        while not self._stop_event.is_set():
            batch = source.peek(self.batch)
            if not batch:
                self._stop_event.wait(self.idle)
                continue
            try:
                if client is None:
                    client = self.connect(self.shovel.dest_node)
                dest = self.shovel.dest_exchange
                client.publish_batch([replace(m, exchange=dest) for m in batch], relayed=True)
            except VermillionError as exc:
                failures += 1
                self.shovel.failures = failures
                if client is not None:
                    client.close()
                    client = None
                if failures >= self.max_failures:
                    log.error("shovel %s inactive after %d failures: %s", self.shovel.shovel_id, failures, exc)
                    self.shovel.active = False
                    return
                self._stop_event.wait(min(self.backoff * 2 ** (failures - 1), 1.0))
                continue
            source.drop_front(len(batch))
            self.shovel.relayed += len(batch)
            failures = 0
        if client is not None:
            client.close()
