"""Text-embedding storage: NLAEMB1 binary files plus a hash-seeded stand-in.

An embedding table maps exact UTF-8 text keys to fixed-width vectors. Values
are stored as little-endian float32 on disk and widened to float64 on load.
The empty-string key is never stored: it always resolves to the zero vector
(the rule for visits with no codes of a given kind).
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"NLAEMB1\0"


class EmbeddingFormatError(Exception):
    """The bytes do not form a valid NLAEMB1 file."""


class EmbeddingKeyError(KeyError):
    """A non-empty key is absent from the table."""

    def __init__(self, key: str):
        super().__init__(key)
        self.key = key

    def __str__(self) -> str:
        return f"no embedding stored for text key {self.key!r}"


class EmbeddingTable:
    """Frozen mapping from text key to a float64 vector of fixed width."""

    def __init__(self, dim: int, entries: dict[str, np.ndarray]):
        if dim < 1:
            raise ValueError(f"embedding dim must be >= 1, got {dim}")
        self.dim = int(dim)
        self._entries: dict[str, np.ndarray] = {}
        self._zero = np.zeros(self.dim)
        for key, vec in entries.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.dim,):
                raise ValueError(
                    f"vector for key {key!r} has shape {arr.shape}, expected ({self.dim},)")
            if key == "":
                raise ValueError("the empty key is reserved for the implicit zero vector")
            if key in self._entries:
                raise ValueError(f"duplicate key {key!r}")
            self._entries[key] = arr

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key == "" or key in self._entries

    def keys(self):
        return self._entries.keys()

    def lookup(self, key: str) -> np.ndarray:
        if key == "":
            return self._zero
        try:
            return self._entries[key]
        except KeyError:
            raise EmbeddingKeyError(key) from None


def lookup(table, key: str) -> np.ndarray:
    return table.lookup(key)


def write_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    """Serialize a table to the NLAEMB1 binary layout."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", len(table), table.dim))
        for key in table.keys():
            raw = key.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"key too long for format ({len(raw)} bytes): {key[:40]!r}...")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(table.lookup(key).astype("<f4").tobytes())


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Parse an NLAEMB1 file, widening float32 payloads to float64."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise EmbeddingFormatError(
            f"{path}: bad magic {data[:8]!r}, expected {MAGIC!r}")
    if len(data) < 16:
        raise EmbeddingFormatError(f"{path}: truncated header")
    count, dim = struct.unpack_from("<II", data, 8)
    if dim < 1:
        raise EmbeddingFormatError(f"{path}: dim must be >= 1, got {dim}")
    entries: dict[str, np.ndarray] = {}
    offset = 16
    vec_bytes = 4 * dim
    for _ in range(count):
        if offset + 2 > len(data):
            raise EmbeddingFormatError(f"{path}: truncated at entry header (offset {offset})")
        (key_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + key_len + vec_bytes > len(data):
            raise EmbeddingFormatError(f"{path}: truncated entry payload (offset {offset})")
        key = data[offset:offset + key_len].decode("utf-8")
        offset += key_len
        if key in entries:
            raise EmbeddingFormatError(f"{path}: duplicate key {key!r}")
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(np.float64)
        offset += vec_bytes
        entries[key] = vec
    if offset != len(data):
        raise EmbeddingFormatError(
            f"{path}: {len(data) - offset} trailing bytes after {count} entries")
    return EmbeddingTable(dim, entries)


def pseudo_embedding(key: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic unit-norm stand-in vector for a text key.

    The key is hashed with BLAKE2b (keyed by the seed) into a PRNG seed, so
    the result depends only on (key, dim, seed) and not on the platform's
    string hashing.
    """
    if dim < 1:
        raise ValueError(f"embedding dim must be >= 1, got {dim}")
    if key == "":
        return np.zeros(dim)
    digest = hashlib.blake2b(
        key.encode("utf-8"), digest_size=16,
        key=int(seed).to_bytes(8, "little", signed=True)).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    vec = rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


class PseudoEmbeddings:
    """Table-compatible generator of pseudo embeddings; every key resolves."""

    def __init__(self, dim: int, seed: int):
        if dim < 1:
            raise ValueError(f"embedding dim must be >= 1, got {dim}")
        self.dim = int(dim)
        self.seed = int(seed)
        self._cache: dict[str, np.ndarray] = {}

    def __contains__(self, key: str) -> bool:
        return True

    def lookup(self, key: str) -> np.ndarray:
        vec = self._cache.get(key)
        if vec is None:
            vec = pseudo_embedding(key, self.dim, self.seed)
            self._cache[key] = vec
        return vec
