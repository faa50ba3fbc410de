"""Versioned binary container for trained networks.

Layout (all integers little-endian)::

    magic      4 bytes   b"SHAR"
    version    uint16
    hdr_len    uint32
    header     hdr_len bytes of UTF-8 JSON
    blobs      raw float32 little-endian parameter arrays, back to back
    crc32      uint32 over every preceding byte

The JSON header carries ``kind``, an ``architecture`` dict sufficient to rebuild
the network, ``layers`` (name, shape, byte offset into the blob section, byte
count) and a free-form ``extra`` dict.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptArtifact, VersionMismatch

MAGIC = b"SHAR"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")


def save_artifact(path, kind: str, architecture: dict, tensors: dict, extra: dict | None = None) -> int:
    """Write ``tensors`` (name -> array) to ``path``; returns the byte size."""
    layers = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
        raw = a.tobytes()
        layers.append({"name": name, "shape": list(a.shape), "dtype": "<f4", "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "kind": kind,
        "format_version": FORMAT_VERSION,
        "architecture": architecture,
        "layers": layers,
        "extra": extra or {},
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(hdr)) + hdr + b"".join(blobs)
    data = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    Path(path).write_bytes(data)
    return len(data)


def load_artifact(path, expected_kind: str | None = None):
    """Return ``(header, tensors)``; raises CorruptArtifact / VersionMismatch."""
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size + 4:
        raise CorruptArtifact(f"{path}: file too short ({len(data)} bytes)")
    magic, version, hdr_len = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptArtifact(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptArtifact(f"{path}: checksum mismatch (truncated or modified)")
    start = _PREFIX.size
    try:
        header = json.loads(body[start : start + hdr_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptArtifact(f"{path}: unreadable header") from exc
    if expected_kind is not None and header.get("kind") != expected_kind:
        raise CorruptArtifact(f"{path}: holds a {header.get('kind')!r} artifact, expected {expected_kind!r}")
    blob = body[start + hdr_len :]
    tensors = {}
    for layer in header["layers"]:
        a, n = layer["offset"], layer["nbytes"]
        if a + n > len(blob):
            raise CorruptArtifact(f"{path}: layer {layer['name']} runs past the end of the file")
        arr = np.frombuffer(blob[a : a + n], dtype="<f4").reshape(layer["shape"])
        tensors[layer["name"]] = arr.copy()
    return header, tensors
