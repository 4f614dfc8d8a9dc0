"""Error types shared by every component.

Each error carries a stable ``kind`` string (used on the broker wire) and the
HTTP status the gateway maps it to.
"""


class VermillionError(Exception):
    kind = "internal"
    status = 500


class InvalidArgument(VermillionError):
    kind = "invalid-argument"
    status = 400


class AccessDenied(VermillionError):
    kind = "access-denied"
    status = 403


class Unauthenticated(AccessDenied):
    """Unknown or malformed credential; a denial that maps to 401."""

    kind = "unauthenticated"
    status = 401


class NotFound(VermillionError):
    kind = "not-found"
    status = 404


class Conflict(VermillionError):
    kind = "conflict"
    status = 409


class PayloadTooLarge(VermillionError):
    kind = "payload-too-large"
    status = 413


class PoolExhausted(VermillionError):
    kind = "pool-exhausted"
    status = 429


class NodeUnavailable(VermillionError):
    kind = "node-unavailable"
    status = 503


class PeerTimeout(VermillionError):
    kind = "peer-timeout"
    status = 504


_BY_KIND = {
    cls.kind: cls
    for cls in (
        VermillionError,
        InvalidArgument,
        Unauthenticated,
        AccessDenied,
        NotFound,
        Conflict,
        PayloadTooLarge,
        PoolExhausted,
        NodeUnavailable,
        PeerTimeout,
    )
}


def error_from_kind(kind: str, message: str = "") -> VermillionError:
    """Rebuild an error received over the wire."""
    return _BY_KIND.get(kind, VermillionError)(message)
