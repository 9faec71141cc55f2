"""Canonical JSON serialization and content hashing for artifacts.

All persisted artifacts are content-addressed: the hash is computed over a
canonical JSON encoding of the payload (sorted keys, shortest round-trip
float representation), so identical payloads always hash identically and
every stored decimal survives a save/load round trip bit-exactly.
"""

from __future__ import annotations

import hashlib
import json


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)


def content_hash(payload) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


#: Keys that record *when* something happened rather than *what* it is.  They
#: are dropped before hashing so that re-running an identical pipeline step
#: addresses the same content (replays must reproduce output hashes), at the
#: cost of leaving these advisory fields outside the integrity check.
VOLATILE_KEYS = frozenset({"timestamp", "created_at", "started", "finished", "wall_time_s"})


def stable_view(payload):
    """Recursively drop volatile bookkeeping keys from a JSON-shaped payload."""
    if isinstance(payload, dict):
        return {
            k: stable_view(v) for k, v in payload.items() if k not in VOLATILE_KEYS
        }
    if isinstance(payload, (list, tuple)):
        return [stable_view(v) for v in payload]
    return payload


def stable_hash(payload) -> str:
    """Content hash over the payload minus volatile keys; the store's address."""
    return content_hash(stable_view(payload))
