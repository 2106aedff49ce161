"""Immutable sorted row files.

Generation ``N`` of a column family is three files:

* ``gen-N.sst``   rows sorted by id, unique per id (see ``rows.encode_row``)
* ``gen-N.idx``   repeated ``[u32 key_len][key][u64 offset]``
* ``gen-N.bloom`` bloom filter over the ids

Files are written under ``.tmp`` names and renamed; the ``.sst`` rename is
the commit point, so a generation without its ``.sst`` never existed.
"""
from __future__ import annotations

import bisect
import logging
import os
import struct
import threading
from pathlib import Path
from typing import BinaryIO, Callable, Iterator, Optional, Sequence

from .bloom import BloomFilter
from .rows import Row, decode_row, encode_row

log = logging.getLogger("tweetpipe.store")

FaultHook = Callable[[str], None]

_IDX = struct.Struct("<Q")
_U32 = struct.Struct("<I")


def table_paths(directory: Path, generation: int) -> tuple[Path, Path, Path]:
    stem = directory / f"gen-{generation}"
    return stem.with_suffix(".sst"), stem.with_suffix(".idx"), stem.with_suffix(".bloom")


def list_generations(directory: Path) -> list[int]:
    gens = []
    for p in directory.glob("gen-*.sst"):
        try:
            gens.append(int(p.stem.split("-", 1)[1]))
        except ValueError:
            continue
    return sorted(gens)


def _write_file(path: Path, data: bytes, sync: bool) -> None:
    with path.open("wb") as f:
        f.write(data)
        f.flush()
        if sync:
            os.fsync(f.fileno())


class SSTable:
    def __init__(self, directory: Path, generation: int, bloom: BloomFilter,
                 keys: list[str], offsets: list[int], size: int) -> None:
        self.directory = directory
        self.generation = generation
        self.bloom = bloom
        self._keys = keys
        self._offsets = offsets
        self._size = size
        self.path = table_paths(directory, generation)[0]
        self._fh: BinaryIO = self.path.open("rb")
        self._lock = threading.Lock()

    @property
    def min_key(self) -> Optional[str]:
        return self._keys[0] if self._keys else None

    @property
    def max_key(self) -> Optional[str]:
        return self._keys[-1] if self._keys else None

    @property
    def index(self) -> list[tuple[str, int]]:
        return list(zip(self._keys, self._offsets))

    def __len__(self) -> int:
        return len(self._keys)

    def __repr__(self) -> str:
        return f"SSTable(gen={self.generation}, rows={len(self._keys)}, keys=[{self.min_key!r}..{self.max_key!r}])"

    # ----------------------------
    # Write / open
    # ----------------------------

    @classmethod
    def write(cls, directory: Path, generation: int, rows: Sequence[Row],
              sync: bool = True, fault_hook: FaultHook | None = None) -> "SSTable":
        """Write ``rows`` (sorted by id, unique) as generation ``generation``."""
        sst, idx, blm = table_paths(directory, generation)
        bloom = BloomFilter.for_capacity(len(rows))
        data = bytearray()
        index = bytearray()
        prev: str | None = None
        for r in rows:
            if prev is not None and r.id <= prev:
                raise ValueError(f"rows not sorted/unique at {r.id!r}")
            prev = r.id
            key = r.id.encode("utf-8")
            index += _U32.pack(len(key)) + key + _IDX.pack(len(data))
            data += encode_row(r)
            bloom.add(r.id)

        tmp = [p.with_name(p.name + ".tmp") for p in (sst, idx, blm)]
        try:
            _write_file(tmp[0], bytes(data), sync)
            _write_file(tmp[1], bytes(index), sync)
            _write_file(tmp[2], bloom.to_bytes(), sync)
            if fault_hook:
                fault_hook("sstable.written")
            os.replace(tmp[1], idx)
            os.replace(tmp[2], blm)
            if fault_hook:
                fault_hook("sstable.meta_renamed")
            os.replace(tmp[0], sst)
        except OSError:
            for t in tmp:
                t.unlink(missing_ok=True)
            raise
        log.info("Wrote %s/gen-%d.sst (%d rows)", directory.name, generation, len(rows))
        return cls.open(directory, generation)

    @classmethod
    def open(cls, directory: Path, generation: int) -> "SSTable":
        sst, idx, blm = table_paths(directory, generation)
        raw = idx.read_bytes()
        keys: list[str] = []
        offsets: list[int] = []
        pos = 0
        while pos < len(raw):
            (klen,) = _U32.unpack_from(raw, pos)
            pos += 4
            keys.append(raw[pos:pos + klen].decode("utf-8"))
            pos += klen
            (off,) = _IDX.unpack_from(raw, pos)
            pos += _IDX.size
            offsets.append(off)
        return cls(directory, generation, BloomFilter.load(blm), keys, offsets, sst.stat().st_size)

    # ----------------------------
    # Read
    # ----------------------------

    def may_contain(self, row_id: str) -> bool:
        if not self._keys or row_id < self._keys[0] or row_id > self._keys[-1]:
            return False
        return self.bloom.contains(row_id)

    def _read_slot(self, i: int) -> Row:
        start = self._offsets[i]
        end = self._offsets[i + 1] if i + 1 < len(self._offsets) else self._size
        with self._lock:
            self._fh.seek(start)
            buf = self._fh.read(end - start)
        row, _ = decode_row(buf)
        return row

    def get(self, row_id: str) -> Optional[Row]:
        if not self.may_contain(row_id):
            return None
        i = bisect.bisect_left(self._keys, row_id)
        if i < len(self._keys) and self._keys[i] == row_id:
            return self._read_slot(i)
        return None

    def rows(self) -> Iterator[Row]:
        with self._lock:
            self._fh.seek(0)
            buf = self._fh.read(self._size)
        pos = 0
        while pos < len(buf):
            row, pos = decode_row(buf, pos)
            yield row

    # ----------------------------
    # Lifecycle
    # ----------------------------

    def close(self) -> None:
        with self._lock:
            self._fh.close()

    def delete_files(self, fault_hook: FaultHook | None = None) -> None:
        # .sst first: leftovers without it are ignored and cleaned on recovery.
        sst, idx, blm = table_paths(self.directory, self.generation)
        sst.unlink(missing_ok=True)
        if fault_hook:
            fault_hook("sstable.sst_deleted")
        idx.unlink(missing_ok=True)
        blm.unlink(missing_ok=True)
