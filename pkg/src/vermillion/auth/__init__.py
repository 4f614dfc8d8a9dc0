"""Auth DB and broker authorisation backend."""

from .backend import AuthBackendServer, RemoteAuthStore
from .hook import StoreAuthHook
from .store import (
    AuthStore,
    Decision,
    EntityKind,
    EntityRecord,
    FollowRequest,
    FollowStatus,
    PermissionRecord,
    Principal,
    Role,
)

__all__ = [
    "AuthBackendServer",
    "AuthStore",
    "Decision",
    "EntityKind",
    "EntityRecord",
    "FollowRequest",
    "FollowStatus",
    "PermissionRecord",
    "Principal",
    "RemoteAuthStore",
    "Role",
    "StoreAuthHook",
]
