"""REST gateway: authentication, node resolution, pooled broker channels."""

from .app import ApiRequest, ApiResponse, Gateway, GatewayConfig
from .catalogue import flatten, search
from .client import GatewayClient, LocalGatewayClient
from .http import APIKEY_HEADER, GatewayServer, server_ssl_context
from .pool import ChannelPool
from .relay import BindingManager, staging_queue

__all__ = [
    "APIKEY_HEADER",
    "ApiRequest",
    "ApiResponse",
    "BindingManager",
    "ChannelPool",
    "Gateway",
    "GatewayClient",
    "GatewayConfig",
    "GatewayServer",
    "LocalGatewayClient",
    "flatten",
    "search",
    "server_ssl_context",
    "staging_queue",
]
