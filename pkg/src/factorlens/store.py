"""Content-addressed persistence for every pipeline artifact.

Each artifact lives under its kind's subdirectory as ``<hash>.json`` holding a
small envelope (schema version, kind, content hash, created-at, payload), with
a ``latest`` pointer file per kind.  The address is a hash of the payload's
canonical JSON with volatile bookkeeping keys (timestamps, wall time) dropped,
so re-running an identical pipeline step addresses identical content; see
``hashing.stable_hash``.  Everything is plain indented JSON on disk — the
point of the whole system is that a human can audit it.

Beyond the core five kinds (factors, datasets, models, edits, transcripts)
the store also files inference results, audit reports, and run manifests, so
every command-line invocation leaves a replayable trail.

Concurrency: one writer per store directory; any number of readers.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .core import FactorSet
from .editing import EditRecord
from .em import TrainedModel
from .errors import (
    HashMismatchError,
    StorageError,
    UnknownVersionError,
    ValidationError,
)
from .hashing import stable_hash
from .inference import InferenceResult
from .probing import AuditResult, BehavioralDataset

ENVELOPE_SCHEMA_VERSION = 1
RECOGNIZED_SCHEMA_VERSIONS = frozenset({ENVELOPE_SCHEMA_VERSION})
LATEST = "latest"

_ENVELOPE_FIELDS = ("schema_version", "kind", "content_hash", "created_at", "payload")
_TRANSCRIPT_FIELDS = ("template_id", "prompt", "raw_text", "timestamp")
_MANIFEST_FIELDS = ("command", "config", "inputs", "outputs", "seed", "wall_time_s")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _validate_transcript_bundle(payload: dict) -> None:
    entries = payload.get("transcripts") if isinstance(payload, dict) else None
    if not isinstance(entries, list):
        raise ValidationError("transcript artifact must be {'transcripts': [...]}")
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ValidationError(f"transcript {i} is not an object")
        missing = [k for k in _TRANSCRIPT_FIELDS if k not in entry]
        if missing:
            raise ValidationError(f"transcript {i} is missing {missing}")


def _validate_manifest(payload: dict) -> None:
    if not isinstance(payload, dict):
        raise ValidationError("run manifest must be an object")
    missing = [k for k in _MANIFEST_FIELDS if k not in payload]
    if missing:
        raise ValidationError(f"run manifest is missing {missing}")
    for key in ("inputs", "outputs"):
        if not isinstance(payload[key], dict):
            raise ValidationError(f"run manifest {key} must map names to hashes")


#: kind -> callable that raises if the payload violates the type's invariants.
_VALIDATORS = {
    "factors": FactorSet.from_dict,
    "datasets": BehavioralDataset.from_dict,
    "models": TrainedModel.from_dict,
    "edits": EditRecord.from_dict,
    "transcripts": _validate_transcript_bundle,
    "inferences": InferenceResult.from_dict,
    "audits": AuditResult.from_dict,
    "runs": _validate_manifest,
}

ARTIFACT_KINDS = tuple(_VALIDATORS)


def _check_kind(kind: str) -> None:
    if kind not in _VALIDATORS:
        raise ValidationError(
            f"unknown artifact kind {kind!r}; expected one of {ARTIFACT_KINDS}"
        )


def validate_payload(kind: str, payload: dict) -> None:
    """Run the kind's invariant gate; raises on any violation."""
    _check_kind(kind)
    _VALIDATORS[kind](payload)


@dataclass(frozen=True)
class ArtifactEnvelope:
    """What actually sits in a store file: the payload plus its provenance."""

    schema_version: int
    kind: str
    content_hash: str
    created_at: str
    payload: dict

    def __post_init__(self):
        if self.schema_version not in RECOGNIZED_SCHEMA_VERSIONS:
            raise UnknownVersionError(
                f"artifact schema version {self.schema_version!r} is not recognized "
                f"(this build reads {sorted(RECOGNIZED_SCHEMA_VERSIONS)}); migrate first"
            )
        _check_kind(self.kind)
        actual = stable_hash(self.payload)
        if self.content_hash != actual:
            raise HashMismatchError(
                f"{self.kind} artifact claims hash {self.content_hash} but its "
                f"payload hashes to {actual}"
            )

    @classmethod
    def wrap(cls, kind: str, payload: dict, created_at: str | None = None) -> "ArtifactEnvelope":
        return cls(
            schema_version=ENVELOPE_SCHEMA_VERSION,
            kind=kind,
            content_hash=stable_hash(payload),
            created_at=created_at or _now(),
            payload=payload,
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "kind": self.kind,
            "content_hash": self.content_hash,
            "created_at": self.created_at,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArtifactEnvelope":
        missing = [k for k in _ENVELOPE_FIELDS if k not in d]
        if missing:
            raise StorageError(f"artifact envelope is missing {missing}")
        return cls(**{k: d[k] for k in _ENVELOPE_FIELDS})


class ArtifactStore:
    """Filesystem-backed, content-addressed artifact registry."""

    def __init__(self, root) -> None:
        self.root = Path(root)
        try:
            for kind in ARTIFACT_KINDS:
                (self.root / kind).mkdir(parents=True, exist_ok=True)
        except OSError as err:
            raise StorageError(f"cannot initialize store at {self.root}: {err}") from err

    def _path(self, kind: str, content_hash: str) -> Path:
        return self.root / kind / f"{content_hash}.json"

    def _pointer(self, kind: str) -> Path:
        return self.root / kind / LATEST

    def _write_atomic(self, path: Path, text: str) -> None:
        tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
        try:
            tmp.write_text(text, encoding="utf-8")
            os.replace(tmp, path)
        except OSError as err:
            raise StorageError(f"cannot write {path}: {err}") from err

    # --- writing ---------------------------------------------------------------

    def save(self, kind: str, payload: dict) -> str:
        """Validate, envelope, and durably write; returns the content hash.

        Saving a payload that already exists is a pure no-op: the original
        file, its created-at, and the ``latest`` pointer all stay put.  This
        keeps manifest replays from disturbing the store they verify.
        """
        validate_payload(kind, payload)
        envelope = ArtifactEnvelope.wrap(kind, payload)
        path = self._path(kind, envelope.content_hash)
        if not path.exists():
            self._write_atomic(path, json.dumps(envelope.to_dict(), indent=2))
            self._write_atomic(self._pointer(kind), envelope.content_hash + "\n")
        return envelope.content_hash

    # --- reading ---------------------------------------------------------------

    def latest_hash(self, kind: str) -> str | None:
        _check_kind(kind)
        pointer = self._pointer(kind)
        if not pointer.exists():
            return None
        return pointer.read_text(encoding="utf-8").strip()

    def exists(self, kind: str, content_hash: str) -> bool:
        _check_kind(kind)
        return self._path(kind, content_hash).exists()

    def list_hashes(self, kind: str) -> list[str]:
        """All stored hashes of a kind, oldest first."""
        _check_kind(kind)
        entries = []
        for path in (self.root / kind).glob("*.json"):
            try:
                created = json.loads(path.read_text(encoding="utf-8")).get("created_at", "")
            except (OSError, json.JSONDecodeError):
                created = ""
            entries.append((created, path.stem))
        return [h for _, h in sorted(entries)]

    def resolve(self, kind: str, ref: str) -> str:
        """Turn ``latest``, a full hash, or an unambiguous prefix into a hash."""
        _check_kind(kind)
        return self._resolve(kind, ref)

    def _resolve(self, kind: str, ref: str) -> str:
        if ref == LATEST:
            head = self.latest_hash(kind)
            if head is None:
                raise StorageError(f"store has no {kind} artifacts yet")
            return head
        if self._path(kind, ref).exists():
            return ref
        matches = [h for h in self.list_hashes(kind) if h.startswith(ref)]
        if not matches:
            raise StorageError(f"no {kind} artifact matches {ref!r}")
        if len(matches) > 1:
            raise StorageError(
                f"{ref!r} is ambiguous among {kind} artifacts: {sorted(matches)}"
            )
        return matches[0]

    def load(self, kind: str, ref: str = LATEST) -> ArtifactEnvelope:
        """Read one artifact; every invariant is re-checked before return."""
        _check_kind(kind)
        resolved = self._resolve(kind, ref)
        path = self._path(kind, resolved)
        try:
            raw = path.read_text(encoding="utf-8")
        except OSError as err:
            raise StorageError(f"cannot read {path}: {err}") from err
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as err:
            raise StorageError(f"{path} is not valid JSON: {err}") from err
        envelope = ArtifactEnvelope.from_dict(data)
        if envelope.kind != kind:
            raise ValidationError(
                f"{path} holds a {envelope.kind} artifact, expected {kind}"
            )
        if envelope.content_hash != resolved:
            raise HashMismatchError(
                f"{path} is filed under {resolved} but its envelope says "
                f"{envelope.content_hash}"
            )
        _VALIDATORS[kind](envelope.payload)
        return envelope

    def load_payload(self, kind: str, ref: str = LATEST) -> dict:
        return self.load(kind, ref).payload
