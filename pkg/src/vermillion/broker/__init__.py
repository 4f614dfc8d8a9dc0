"""Standalone message-broker node."""

from .client import BrokerClient
from .core import AllowAll, Binding, BrokerConfig, BrokerCore, Message, Queue, Shovel
from .server import BrokerServer

__all__ = [
    "AllowAll",
    "Binding",
    "BrokerClient",
    "BrokerConfig",
    "BrokerCore",
    "BrokerServer",
    "Message",
    "Queue",
    "Shovel",
]
