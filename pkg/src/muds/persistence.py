"""Versioned artifact files with content checksums.

Every artifact is a JSON envelope {format_version, kind, payload, checksum}
where the checksum covers the canonical payload bytes. Canonical JSON
(sorted keys, minimal separators, repr-роundtrip floats) makes save/load/save
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

ARTIFACT_VERSION = 1


class PersistenceError(RuntimeError):
    pass


class ChecksumError(PersistenceError):
    pass


class VersionError(PersistenceError):
    pass


def canonical_bytes(payload) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def checksum(payload) -> str:
    return hashlib.sha256(canonical_bytes(payload)).hexdigest()


def save_artifact(path, kind: str, payload) -> Path:
    path = Path(path)
    envelope = {
        "format_version": ARTIFACT_VERSION,
        "kind": kind,
        "payload": payload,
        "checksum": checksum(payload),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(canonical_bytes(envelope))
    return path


def load_artifact(path, kind: str | None = None):
    path = Path(path)
    try:
        envelope = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise PersistenceError(f"cannot read artifact {path}: {err}") from err
    version = envelope.get("format_version")
    if version != ARTIFACT_VERSION:
        raise VersionError(
            f"{path}: format version {version!r} not supported (expected {ARTIFACT_VERSION})")
    payload = envelope.get("payload")
    if checksum(payload) != envelope.get("checksum"):
        raise ChecksumError(f"{path}: payload checksum mismatch, file is corrupt")
    if kind is not None and envelope.get("kind") != kind:
        raise PersistenceError(
            f"{path}: expected artifact kind {kind!r}, found {envelope.get('kind')!r}")
    return payload


def write_jsonl(path, header: dict, records) -> Path:
    """Line-delimited record export with a self-describing header line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def read_jsonl(path):
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
        header = json.loads(first)["header"]
        records = [json.loads(line) for line in fh if line.strip()]
    return header, records
