"""Versioned, checksummed model artifacts.

An artifact is one JSON document::

    {"format_version": 1, "kind": ..., "checksum": "sha256:...", "payload": {...}}

The checksum covers the canonical serialization of ``payload`` (sorted keys,
compact separators), so any edit to the stored model is detected on load.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Mapping

from bugsev.errors import ArtifactError, ChecksumError, VersionError
from bugsev.models import TrainedModel

FORMAT_VERSION = 1


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def payload_checksum(payload: Mapping) -> str:
    return "sha256:" + hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write ``text`` to ``path`` via a sibling temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_envelope(model: TrainedModel, config: Mapping | None = None, severity_policy: Mapping | None = None) -> dict:
    payload = {
        "model": model.to_dict(),
        "config": dict(config or {}),
        "severity_policy": dict(severity_policy or {}),
    }
    return {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "checksum": payload_checksum(payload),
        "payload": payload,
    }


def save_model(
    model: TrainedModel,
    path: str | Path,
    config: Mapping | None = None,
    severity_policy: Mapping | None = None,
) -> None:
    atomic_write_text(path, canonical_json(to_envelope(model, config, severity_policy)) + "\n")


def open_envelope(envelope: Mapping) -> dict:
    """Check version, then checksum; return the verified payload."""
    if not isinstance(envelope, Mapping) or "format_version" not in envelope:
        raise ArtifactError("not a model artifact")
    version = envelope["format_version"]
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported artifact version {version!r} (expected {FORMAT_VERSION})")
    payload = envelope.get("payload")
    if not isinstance(payload, Mapping):
        raise ArtifactError("artifact has no payload")
    if envelope.get("checksum") != payload_checksum(payload):
        raise ChecksumError("artifact checksum mismatch")
    return dict(payload)


def load_payload(path: str | Path) -> dict:
    try:
        envelope = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ArtifactError(f"cannot read artifact {path}: {exc}") from None
    except json.JSONDecodeError:
        raise ChecksumError(f"artifact {path} is not valid JSON") from None
    return open_envelope(envelope)


def load_model(path: str | Path) -> TrainedModel:
    payload = load_payload(path)
    try:
        return TrainedModel.from_dict(payload["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"corrupt model payload: {exc}") from None
