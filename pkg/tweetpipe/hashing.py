from __future__ import annotations

import hashlib
import zlib

def stable_hash64(data: bytes) -> int:
    # blake2b truncated to 8 bytes, little-endian; identical across runs and processes
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")

def stable_key_hash(key: object) -> int:
    if isinstance(key, bytes):
        return stable_hash64(key)
    if isinstance(key, str):
        return stable_hash64(key.encode("utf-8"))
    return stable_hash64(repr(key).encode("utf-8"))

def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF
