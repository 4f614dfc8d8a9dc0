"""Well-known principal names used between fleet components."""

# Identity of fleet-internal callers (gateway, daemons, peer brokers) once
# they authenticate a broker channel with the shared fleet secret.
SYSTEM = "@system"

# Per-node queue that receives a copy of every publish for the archiver.
ARCHIVE_QUEUE = "archive"
