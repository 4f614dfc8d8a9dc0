"""Run a tick function periodically on a background thread."""

from __future__ import annotations

import logging
import threading
from typing import Callable

log = logging.getLogger(__name__)

ARCHIVER_PERIOD = 1.0
UNBIND_PERIOD = 5.0


class Periodic(threading.Thread):
    def __init__(self, tick: Callable[[], int], period: float, name: str = "periodic"):
        super().__init__(name=name, daemon=True)
        self.tick = tick
        self.period = period
        self.ticks = 0
        self._stop_event = threading.Event()

    def run(self) -> None:
        while not self._stop_event.is_set():
            try:
                self.tick()
            except Exception:
                log.exception("%s tick failed", self.name)
            self.ticks += 1
            self._stop_event.wait(self.period)

    def stop(self, final_tick: bool = False) -> None:
        self._stop_event.set()
        if self.is_alive():
            self.join()
        if final_tick:
            self.tick()
