"""The key/label datastore and its little-endian binary file format.

Layout::

    magic  b"DKNN"
    version u32
    dim     u32
    count   u64
    keys    f32[count * dim]   (row-major)
    labels  u32[count]
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

STORE_MAGIC = b"DKNN"
STORE_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


@dataclass
class VectorStore:
    """Ordered keys with one integer label (token id) per key.

    Keys are held in float64 in memory; the file format stores float32.
    """

    keys: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.keys = np.ascontiguousarray(self.keys, dtype=np.float64)
        if self.keys.ndim != 2:
            raise ValueError(f"keys must be 2-D, got shape {self.keys.shape}")
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.keys.shape[0],):
            raise ValueError("need exactly one label per key")

    def __len__(self) -> int:
        return self.keys.shape[0]

    @property
    def dim(self) -> int:
        return self.keys.shape[1]

    @classmethod
    def empty(cls, dim: int) -> "VectorStore":
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=np.int64))

    def copy(self) -> "VectorStore":
        return VectorStore(self.keys.copy(), self.labels.copy())

    def subset(self, idx) -> "VectorStore":
        return VectorStore(self.keys[idx], self.labels[idx])

    def to_bytes(self) -> bytes:
        n, d = self.keys.shape
        if n and (self.labels.min() < 0 or self.labels.max() > 0xFFFFFFFF):
            raise ValueError("labels must fit in u32")
        return b"".join(
            [
                _HEADER.pack(STORE_MAGIC, STORE_VERSION, d, n),
                self.keys.astype("<f4").tobytes(),
                self.labels.astype("<u4").tobytes(),
            ]
        )

    @classmethod
    def from_bytes(cls, buf: bytes) -> "VectorStore":
        if len(buf) < _HEADER.size:
            raise FormatError("truncated store header")
        magic, version, d, n = _HEADER.unpack_from(buf, 0)
        if magic != STORE_MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != STORE_VERSION:
            raise FormatError(f"unsupported store version {version}")
        off = _HEADER.size
        expected = off + n * d * 4 + n * 4
        if len(buf) != expected:
            raise FormatError(f"store size {len(buf)} != expected {expected}")
        keys = np.frombuffer(buf, dtype="<f4", count=n * d, offset=off).reshape(n, d)
        labels = np.frombuffer(buf, dtype="<u4", count=n, offset=off + n * d * 4)
        return cls(keys.astype(np.float64), labels.astype(np.int64))

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "VectorStore":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def load_vectors(path: str | os.PathLike) -> np.ndarray:
    """Read a query/vector file: either a store file or a ``.npy`` array."""
    path = os.fspath(path)
    if path.endswith(".npy"):
        return np.atleast_2d(np.load(path)).astype(np.float64)
    return VectorStore.load(path).keys
