"""Single-file parameter container: JSON manifest header plus raw float32 blob.

Layout: magic bytes "PLF1", 8-byte little-endian manifest length, the UTF-8
JSON manifest, then all parameter values as little-endian float32 in manifest
order. The same container carries model weights and feature caches.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PLF1"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    """Raised when a container file fails structural validation."""


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def nbytes(self) -> int:
        n = 4
        for extent in self.shape:
            n *= extent
        return n


@dataclass(frozen=True)
class WeightManifest:
    entries: tuple[ManifestEntry, ...]
    metadata: dict = field(default_factory=dict)

    def entry(self, name: str) -> ManifestEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)


def _manifest_bytes(manifest: WeightManifest) -> bytes:
    doc = {
        "format_version": FORMAT_VERSION,
        "metadata": manifest.metadata,
        "entries": [
            {"name": e.name, "shape": list(e.shape), "offset": e.offset}
            for e in manifest.entries
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(path, arrays: dict[str, np.ndarray], metadata: dict | None = None) -> WeightManifest:
    """Write named float32 arrays in dict order; returns the manifest."""
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        entries.append(ManifestEntry(name, tuple(arr.shape), offset))
        offset += arr.nbytes
        blobs.append(arr.tobytes())
    manifest = WeightManifest(tuple(entries), dict(metadata or {}))
    raw = _manifest_bytes(manifest)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(raw).to_bytes(8, "little"))
        f.write(raw)
        for b in blobs:
            f.write(b)
    return manifest


def read_container(path) -> tuple[dict[str, np.ndarray], WeightManifest]:
    """Read and validate a container; returns arrays by name plus the manifest."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise ContainerError(f"{path}: not a {MAGIC.decode()} container")
    raw_len = int.from_bytes(data[4:12], "little")
    if len(data) < 12 + raw_len:
        raise ContainerError(f"{path}: truncated manifest")
    try:
        doc = json.loads(data[12 : 12 + raw_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: unreadable manifest: {exc}") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise ContainerError(
            f"{path}: unknown format version {doc.get('format_version')!r}"
        )
    entries = tuple(
        ManifestEntry(e["name"], tuple(e["shape"]), e["offset"])
        for e in doc["entries"]
    )
    blob = data[12 + raw_len :]
    expected = 0
    for e in entries:
        if e.offset != expected:
            raise ContainerError(
                f"{path}: entry '{e.name}' offset {e.offset}, expected {expected}"
            )
        expected += e.nbytes
    if expected != len(blob):
        raise ContainerError(
            f"{path}: blob length {len(blob)} does not match manifest total {expected}"
            + (f" (truncated at entry '{entries[-1].name}')" if entries else "")
        )
    arrays = {}
    for e in entries:
        arrays[e.name] = (
            np.frombuffer(blob, dtype="<f4", count=e.nbytes // 4, offset=e.offset)
            .reshape(e.shape)
            .copy()
        )
    return arrays, WeightManifest(entries, doc.get("metadata", {}))
