"""Bloom filter over row ids.

Double hashing over a 128-bit blake2b digest: bit_i = (h1 + i*h2) mod m.
Defaults are 10 bits per key and k = 7 (about 0.8% false positives).
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

BITS_PER_KEY = 10
NUM_HASHES = 7

_HEADER = struct.Struct("<III")


def _hashes(key: str) -> tuple[int, int]:
    d = hashlib.blake2b(key.encode("utf-8"), digest_size=16).digest()
    h1 = int.from_bytes(d[:8], "little")
    h2 = int.from_bytes(d[8:], "little") | 1
    return h1, h2


@dataclass
class BloomFilter:
    m: int
    k: int
    n_inserted: int = 0
    bits: bytearray = field(default_factory=bytearray)

    def __post_init__(self) -> None:
        if self.m <= 0 or self.k <= 0:
            raise ValueError(f"bloom filter needs m, k > 0 (m={self.m}, k={self.k})")
        nbytes = (self.m + 7) // 8
        if not self.bits:
            self.bits = bytearray(nbytes)
        elif len(self.bits) != nbytes:
            raise ValueError(f"bit array has {len(self.bits)} bytes, expected {nbytes}")

    @classmethod
    def for_capacity(cls, n: int, bits_per_key: int = BITS_PER_KEY, k: int = NUM_HASHES) -> "BloomFilter":
        return cls(m=max(64, n * bits_per_key), k=k)

    def _positions(self, key: str):
        h1, h2 = _hashes(key)
        for i in range(self.k):
            yield (h1 + i * h2) % self.m

    def add(self, key: str) -> None:
        for p in self._positions(key):
            self.bits[p >> 3] |= 1 << (p & 7)
        self.n_inserted += 1

    def contains(self, key: str) -> bool:
        return all(self.bits[p >> 3] & (1 << (p & 7)) for p in self._positions(key))

    __contains__ = contains

    def false_positive_rate(self) -> float:
        """Expected rate for the current fill: (1 - e^(-kn/m))^k."""
        return (1.0 - math.exp(-self.k * self.n_inserted / self.m)) ** self.k

    def to_bytes(self) -> bytes:
        return _HEADER.pack(self.m, self.k, self.n_inserted) + bytes(self.bits)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BloomFilter":
        m, k, n = _HEADER.unpack_from(data, 0)
        return cls(m=m, k=k, n_inserted=n, bits=bytearray(data[_HEADER.size:]))

    @classmethod
    def load(cls, path: Path) -> "BloomFilter":
        return cls.from_bytes(path.read_bytes())
