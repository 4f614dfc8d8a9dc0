"""Background services: the archive drainer and the unbind daemon."""

from .archiver import Archiver, archive_path, archiver_tick, read_archive
from .runner import ARCHIVER_PERIOD, UNBIND_PERIOD, Periodic
from .unbind import UnbindDaemon, unbind_daemon_tick

__all__ = [
    "ARCHIVER_PERIOD",
    "UNBIND_PERIOD",
    "Archiver",
    "Periodic",
    "UnbindDaemon",
    "archive_path",
    "archiver_tick",
    "read_archive",
    "unbind_daemon_tick",
]
