"""Durable append-only journal of row writes.

Record: ``[u32 LE crc32 of row bytes][row bytes]`` (row bytes per
``rows.encode_row``). A short or checksum-failing final record is a torn
tail: it is dropped with a warning. A bad checksum before the tail is
corruption.

A flush renames the live ``commit.log`` to ``commit-<gen>.log`` (the
segment covered by table generation ``gen``) and starts an empty log. The
segment is deleted once ``gen-<gen>.sst`` is installed.
"""
from __future__ import annotations

import logging
import os
import struct
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

from .hashing import crc32
from .rows import Row, TruncatedRecord, decode_row, encode_row

log = logging.getLogger("tweetpipe.store")

_CRC = struct.Struct("<I")

COMMIT_LOG = "commit.log"


class CorruptLog(RuntimeError):
    pass


def segment_path(directory: Path, generation: int) -> Path:
    return directory / f"commit-{generation}.log"


def list_segments(directory: Path) -> list[tuple[int, Path]]:
    """Rotated segments, oldest generation first."""
    out = []
    for p in directory.glob("commit-*.log"):
        try:
            out.append((int(p.stem.split("-", 1)[1]), p))
        except ValueError:
            continue
    return sorted(out)


def _frame(rows: Iterable[Row]) -> bytes:
    buf = bytearray()
    for r in rows:
        body = encode_row(r)
        buf += _CRC.pack(crc32(body)) + body
    return bytes(buf)


def replay(path: Path, repair: bool = True) -> list[Row]:
    """Read every intact record.

    With ``repair`` a torn tail is truncated in place. Without it the file
    is left alone and the tail is skipped silently: a live writer may be in
    the middle of appending it.
    """
    if not path.exists():
        return []
    data = path.read_bytes()
    rows: list[Row] = []
    pos = 0
    good = 0
    while pos < len(data):
        if pos + _CRC.size > len(data):
            break
        (crc,) = _CRC.unpack_from(data, pos)
        try:
            row, end = decode_row(data, pos + _CRC.size)
        except TruncatedRecord:
            break
        except ValueError as e:
            raise CorruptLog(f"{path}: undecodable record at byte {pos}: {e}") from e
        if crc32(data[pos + _CRC.size:end]) != crc:
            if end == len(data):
                break
            raise CorruptLog(f"{path}: checksum mismatch at byte {pos}")
        rows.append(row)
        pos = good = end
    if good < len(data) and repair:
        log.warning("Discarding torn commit-log tail of %s (%d bytes)", path, len(data) - good)
        with path.open("r+b") as f:
            f.truncate(good)
    return rows


def rewrite(path: Path, rows: Iterable[Row], sync: bool = True) -> None:
    """Atomically replace the log at ``path`` with exactly ``rows``."""
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as f:
        f.write(_frame(rows))
        f.flush()
        if sync:
            os.fsync(f.fileno())
    os.replace(tmp, path)


class CommitLog:
    def __init__(self, path: Path, sync: bool = True) -> None:
        self.path = path
        self.sync = sync
        self._fh: BinaryIO = path.open("ab")

    def append(self, rows: Sequence[Row]) -> None:
        """Append ``rows`` and make them durable with one flush (group commit)."""
        buf = _frame(rows)
        start = self._fh.tell()
        try:
            self._fh.write(buf)
            self._fh.flush()
            if self.sync:
                os.fsync(self._fh.fileno())
        except OSError:
            # Roll back a partial append so later records stay reachable.
            try:
                self._fh.truncate(start)
            except OSError:
                pass
            raise

    def rotate(self, segment: Path) -> None:
        """Move the current contents to ``segment`` and continue in an empty log."""
        self._fh.close()
        try:
            os.replace(self.path, segment)
        finally:
            self._fh = self.path.open("ab")

    def size(self) -> int:
        return self._fh.tell()

    def close(self) -> None:
        self._fh.close()
