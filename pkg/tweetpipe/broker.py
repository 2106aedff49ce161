"""Embedded publish-subscribe log broker.

A topic is a fixed set of numbered partitions. Each partition is an
append-only log; offsets are dense and implicit by position. With a data
directory every partition is mirrored to one segment file:

    repeated [u32 LE payload_length][u32 LE key_length, 0xFFFFFFFF = no key][key][payload]

and consumer-group commits go to ``offsets.tsv`` as
``group_id<TAB>topic<TAB>partition<TAB>offset`` lines (last line wins).
Consumption is pull-based and never blocks.
"""
from __future__ import annotations

import logging
import os
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator, Optional

from .hashing import stable_hash64
from .security import safe_component, child_dir

log = logging.getLogger("tweetpipe.broker")

_HEADER = struct.Struct("<II")
NO_KEY = 0xFFFFFFFF
OFFSETS_FILE = "offsets.tsv"


class BrokerError(RuntimeError):
    pass

class DuplicateTopic(BrokerError):
    pass

class InvalidPartitionCount(BrokerError, ValueError):
    pass

class UnknownTopic(BrokerError, KeyError):
    pass

class UnknownPartition(BrokerError, IndexError):
    pass

class OffsetBeyondLog(BrokerError):
    pass

class NonMonotonicCommit(BrokerError):
    pass


def monotonic_ms() -> float:
    return time.monotonic() * 1000.0


@dataclass(frozen=True)
class Record:
    topic: str
    partition: int
    offset: int
    produce_ts: float  # monotonic ms
    key: Optional[bytes]
    payload: bytes


@dataclass(frozen=True)
class ConsumerPosition:
    group_id: str
    topic: str
    partition: int
    committed_offset: int


def encode_segment_record(key: Optional[bytes], payload: bytes) -> bytes:
    klen = NO_KEY if key is None else len(key)
    return _HEADER.pack(len(payload), klen) + (key or b"") + payload


def iter_segment(data: bytes) -> Iterator[tuple[Optional[bytes], bytes, int]]:
    """Yield (key, payload, end_position); stops silently at a torn tail."""
    pos = 0
    n = len(data)
    while pos + _HEADER.size <= n:
        plen, klen = _HEADER.unpack_from(data, pos)
        body = pos + _HEADER.size
        key_len = 0 if klen == NO_KEY else klen
        end = body + key_len + plen
        if end > n:
            return
        key = None if klen == NO_KEY else data[body:body + key_len]
        payload = data[body + key_len:end]
        yield key, payload, end
        pos = end


class Partition:
    def __init__(self, topic: str, index: int, path: Path | None = None, sync: bool = False) -> None:
        self.topic = topic
        self.index = index
        self.path = path
        self._sync = sync
        self._log: list[Record] = []
        self._last_ts = 0.0
        self._lock = threading.Lock()
        self._fh: BinaryIO | None = None
        if path is not None:
            self._load()
            self._fh = path.open("ab")

    def _load(self) -> None:
        assert self.path is not None
        if not self.path.exists():
            self.path.touch()
            return
        data = self.path.read_bytes()
        good = 0
        now = monotonic_ms()
        for key, payload, end in iter_segment(data):
            self._log.append(Record(self.topic, self.index, len(self._log), now, key, payload))
            good = end
        if good < len(data):
            log.warning("Truncating torn tail of %s (%d bytes)", self.path, len(data) - good)
            with self.path.open("r+b") as f:
                f.truncate(good)
        self._last_ts = now
        if self._log:
            log.info("Restored %s[%d]: %d records", self.topic, self.index, len(self._log))

    def append(self, key: Optional[bytes], payload: bytes) -> Record:
        with self._lock:
            ts = max(monotonic_ms(), self._last_ts)
            rec = Record(self.topic, self.index, len(self._log), ts, key, payload)
            if self._fh is not None:
                self._fh.write(encode_segment_record(key, payload))
                self._fh.flush()
                if self._sync:
                    os.fsync(self._fh.fileno())
            self._log.append(rec)
            self._last_ts = ts
            return rec

    def read(self, from_offset: int, max_records: int) -> list[Record]:
        with self._lock:
            return self._log[from_offset:from_offset + max_records]

    def __len__(self) -> int:
        return len(self._log)

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


class Topic:
    def __init__(self, name: str, partitions: list[Partition]) -> None:
        self.name = name
        self.partitions = partitions
        self._rr = 0
        self._rr_lock = threading.Lock()

    @property
    def partition_count(self) -> int:
        return len(self.partitions)

    def choose_partition(self, key: Optional[bytes]) -> int:
        if key is not None:
            return stable_hash64(key) % len(self.partitions)
        with self._rr_lock:
            idx = self._rr
            self._rr = (self._rr + 1) % len(self.partitions)
        return idx

    def lengths(self) -> list[int]:
        return [len(p) for p in self.partitions]


class Broker:
    """Single-process broker; file-backed when ``data_dir`` is given."""

    def __init__(self, data_dir: Path | None = None, sync: bool = False) -> None:
        self.data_dir = data_dir.resolve() if data_dir is not None else None
        self._sync = sync
        self._topics: dict[str, Topic] = {}
        self._commits: dict[tuple[str, str, int], int] = {}
        self._lock = threading.Lock()
        self._commit_lock = threading.Lock()
        self._offsets_fh: BinaryIO | None = None
        if self.data_dir is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            self._restore()

    @classmethod
    def open(cls, data_dir: Path, sync: bool = False) -> "Broker":
        return cls(data_dir, sync=sync)

    # ----------------------------
    # Restore
    # ----------------------------

    def _restore(self) -> None:
        assert self.data_dir is not None
        for tdir in sorted(p for p in self.data_dir.iterdir() if p.is_dir()):
            segs = sorted(tdir.glob("partition-*.seg"))
            if not segs:
                continue
            count = len(segs)
            parts = [Partition(tdir.name, i, tdir / f"partition-{i}.seg", self._sync) for i in range(count)]
            self._topics[tdir.name] = Topic(tdir.name, parts)

        offsets = self.data_dir / OFFSETS_FILE
        if offsets.exists():
            for lineno, line in enumerate(offsets.read_text(encoding="utf-8").splitlines(), start=1):
                fields = line.split("\t")
                if len(fields) != 4:
                    log.warning("Skipping malformed offsets line %d", lineno)
                    continue
                group, topic, part, off = fields
                try:
                    self._commits[(group, topic, int(part))] = int(off)
                except ValueError:
                    log.warning("Skipping malformed offsets line %d", lineno)
        self._offsets_fh = offsets.open("ab")

    # ----------------------------
    # Topics
    # ----------------------------

    def create_topic(self, name: str, partition_count: int) -> Topic:
        if not name:
            raise ValueError("topic name must be non-empty")
        if partition_count < 1:
            raise InvalidPartitionCount(f"partition_count must be >= 1, got {partition_count}")
        with self._lock:
            if name in self._topics:
                raise DuplicateTopic(name)
            parts: list[Partition] = []
            if self.data_dir is not None:
                tdir = child_dir(self.data_dir, safe_component(name, "topic"))
                tdir.mkdir(parents=True, exist_ok=True)
                parts = [Partition(name, i, tdir / f"partition-{i}.seg", self._sync) for i in range(partition_count)]
            else:
                parts = [Partition(name, i) for i in range(partition_count)]
            topic = Topic(name, parts)
            self._topics[name] = topic
        log.info("Created topic %s with %d partitions", name, partition_count)
        return topic

    def topic(self, name: str) -> Topic:
        t = self._topics.get(name)
        if t is None:
            raise UnknownTopic(name)
        return t

    def has_topic(self, name: str) -> bool:
        return name in self._topics

    def topics(self) -> list[str]:
        return sorted(self._topics)

    def _partition(self, topic: str, partition: int) -> Partition:
        t = self.topic(topic)
        if not 0 <= partition < t.partition_count:
            raise UnknownPartition(f"{topic}[{partition}]")
        return t.partitions[partition]

    def end_offsets(self, topic: str) -> list[int]:
        return self.topic(topic).lengths()

    # ----------------------------
    # Produce / consume
    # ----------------------------

    def produce(self, topic: str, key: Optional[bytes], payload: bytes) -> tuple[int, int]:
        t = self.topic(topic)
        idx = t.choose_partition(key)
        rec = t.partitions[idx].append(key, payload)
        return idx, rec.offset

    def consume(self, topic: str, partition: int, from_offset: int, max_records: int) -> list[Record]:
        p = self._partition(topic, partition)
        if from_offset < 0:
            raise ValueError(f"from_offset must be >= 0, got {from_offset}")
        if max_records < 1:
            raise ValueError(f"max must be positive, got {max_records}")
        return p.read(from_offset, max_records)

    # ----------------------------
    # Consumer-group offsets
    # ----------------------------

    def commit_offset(self, position: ConsumerPosition) -> None:
        p = self._partition(position.topic, position.partition)
        if position.committed_offset < 0 or position.committed_offset > len(p):
            raise OffsetBeyondLog(
                f"{position.topic}[{position.partition}] commit {position.committed_offset} > log length {len(p)}"
            )
        key = (position.group_id, position.topic, position.partition)
        with self._commit_lock:
            current = self._commits.get(key, 0)
            if position.committed_offset < current:
                raise NonMonotonicCommit(
                    f"{key}: {position.committed_offset} < committed {current}"
                )
            self._commits[key] = position.committed_offset
            if self._offsets_fh is not None:
                line = f"{position.group_id}\t{position.topic}\t{position.partition}\t{position.committed_offset}\n"
                self._offsets_fh.write(line.encode("utf-8"))
                self._offsets_fh.flush()
                if self._sync:
                    os.fsync(self._offsets_fh.fileno())

    def fetch_committed(self, group_id: str, topic: str, partition: int) -> int:
        self._partition(topic, partition)
        with self._commit_lock:
            return self._commits.get((group_id, topic, partition), 0)

    def close(self) -> None:
        for t in self._topics.values():
            for p in t.partitions:
                p.close()
        with self._commit_lock:
            if self._offsets_fh is not None:
                self._offsets_fh.close()
                self._offsets_fh = None
