"""
Binary checkpoint container.

Layout (all integers little-endian)::

    b"CACK"                 magic
    uint32                  format version
    uint32                  header length in bytes
    header                  UTF-8 JSON: kind, config, extra, layer manifest
    float64[...]            parameter arrays, little-endian, manifest order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

MAGIC = b"CACK"
VERSION = 1


def dumps(kind: str, manifest: list[dict], arrays: list[np.ndarray], config: dict, extra: dict | None = None) -> bytes:
    shapes = [tuple(p["shape"]) for layer in manifest for p in layer["params"]]
    if [tuple(a.shape) for a in arrays] != shapes:
        raise CheckpointError("arrays do not match the layer manifest")
    header = {"version": VERSION, "kind": kind, "config": config, "extra": extra or {}, "layers": manifest}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + body


def loads(blob: bytes, expect_kind: str | None = None, expect_manifest: list[dict] | None = None):
    """Decode a checkpoint; returns (header, arrays).

    Raises:
        CheckpointError: bad magic, version, kind, layer manifest or payload size.
    """
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {VERSION})")
    header = json.loads(blob[12 : 12 + hlen].decode())
    if header.get("version") != version:
        raise CheckpointError("header version disagrees with container version")
    if expect_kind is not None and header["kind"] != expect_kind:
        raise CheckpointError(f"checkpoint holds a {header['kind']!r} model, expected {expect_kind!r}")
    if expect_manifest is not None and header["layers"] != expect_manifest:
        raise CheckpointError("layer manifest (kinds/shapes) does not match the model")
    arrays, off = [], 12 + hlen
    for layer in header["layers"]:
        for p in layer["params"]:
            n = int(np.prod(p["shape"], dtype=np.int64)) * 8
            if off + n > len(blob):
                raise CheckpointError("truncated parameter payload")
            arrays.append(np.frombuffer(blob[off : off + n], dtype="<f8").reshape(p["shape"]).astype(np.float64))
            off += n
    if off != len(blob):
        raise CheckpointError("trailing bytes after parameter payload")
    return header, arrays


def save(path: str | Path, *args, **kwargs) -> None:
    Path(path).write_bytes(dumps(*args, **kwargs))


def load(path: str | Path, **kwargs):
    return loads(Path(path).read_bytes(), **kwargs)
