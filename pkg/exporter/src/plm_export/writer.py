"""NLAEMB1 binary writing (and reading, for self-validation).

Layout, little-endian throughout: 8 magic bytes ``NLAEMB1\\0``, u32 entry
count, u32 dim, then per entry a u16 key byte-length, the UTF-8 key, and
dim float32 values. No padding or alignment.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"NLAEMB1\0"


class FormatError(Exception):
    pass


def write_nlaemb(entries: dict[str, np.ndarray], dim: int, path: str | Path) -> None:
    """Write entries in sorted-key order (deterministic bytes)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", len(entries), dim))
        for key in sorted(entries):
            raw = key.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"key exceeds format limit ({len(raw)} bytes)")
            vec = np.asarray(entries[key], dtype="<f4")
            if vec.shape != (dim,):
                raise ValueError(f"vector for {key!r} has shape {vec.shape}, expected ({dim},)")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(vec.tobytes())


def read_nlaemb(path: str | Path) -> tuple[int, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic {data[:8]!r}")
    count, dim = struct.unpack_from("<II", data, 8)
    entries: dict[str, np.ndarray] = {}
    offset = 16
    for _ in range(count):
        if offset + 2 > len(data):
            raise FormatError(f"{path}: truncated entry header")
        (key_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + key_len + 4 * dim > len(data):
            raise FormatError(f"{path}: truncated entry payload")
        key = data[offset:offset + key_len].decode("utf-8")
        offset += key_len
        if key in entries:
            raise FormatError(f"{path}: duplicate key {key!r}")
        entries[key] = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).copy()
        offset += 4 * dim
    if offset != len(data):
        raise FormatError(f"{path}: trailing bytes")
    return dim, entries
