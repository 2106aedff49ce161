"""Single-node log-structured row store.

Write path: commit log (durable) -> memtable -> SSTable on flush.
Read path: memtable, then the memtable being flushed, then SSTables newest
generation first, skipping tables whose key range or bloom filter rules
the id out.

Flush and compaction hold the write lock only while they swap state: the
memtable and commit log are rotated under it, the table is written without
it, and the result is installed under the state lock.

Directory layout::

    <root>/<keyspace>/<column_family>/commit.log
    <root>/<keyspace>/<column_family>/commit-<N>.log      (while gen N is flushed)
    <root>/<keyspace>/<column_family>/gen-<N>.sst|.idx|.bloom
"""
from __future__ import annotations

import heapq
import logging
import threading
import time
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .commitlog import COMMIT_LOG, CommitLog, CorruptLog, list_segments, replay, rewrite, segment_path
from .rows import Row
from .security import child_dir, safe_component
from .sstable import FaultHook, SSTable, list_generations

log = logging.getLogger("tweetpipe.store")

__all__ = [
    "COMMIT_LOG",
    "ColumnFamily",
    "StoreView",
    "Keyspace",
    "Row",
    "StoreError",
    "StoreIoError",
    "EmptyMemtable",
    "NotEnoughTables",
    "StoreClosed",
    "CorruptLog",
]

DEFAULT_MEMTABLE_LIMIT = 10_000
AUTO_COMPACT_TABLES = 4


class StoreError(RuntimeError):
    pass

class StoreIoError(StoreError):
    pass

class EmptyMemtable(StoreError):
    pass

class NotEnoughTables(StoreError):
    pass

class StoreClosed(StoreError):
    pass


def latest(rows: Iterable[Row], n: int) -> list[Row]:
    """The ``n`` rows with greatest processed_at (ties: id descending), newest first."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    return heapq.nlargest(n, rows, key=lambda r: (r.processed_at, r.id))


class ColumnFamily:
    """Table-like row container. Use ``ColumnFamily.recover`` to open one."""

    def __init__(
        self,
        directory: Path,
        memtable_limit: int = DEFAULT_MEMTABLE_LIMIT,
        sync: bool = True,
        auto_compact_tables: int = AUTO_COMPACT_TABLES,
        fault_hook: FaultHook | None = None,
    ) -> None:
        if memtable_limit < 1:
            raise ValueError(f"memtable_limit must be >= 1, got {memtable_limit}")
        self.directory = directory
        self.keyspace = directory.parent.name
        self.name = directory.name
        self.memtable_limit = memtable_limit
        self.sync = sync
        self.auto_compact_tables = auto_compact_tables
        self._fault_hook = fault_hook
        self._memtable: dict[str, Row] = {}
        self._flushing: dict[str, Row] = {}
        self._sstables: list[SSTable] = []
        self._next_gen = 1
        # Lock order: maintenance -> write -> state.
        self._maintenance_lock = threading.Lock()
        self._write_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._closed = True
        self._failure: BaseException | None = None
        self._log: CommitLog | None = None

    # ----------------------------
    # Open / recover
    # ----------------------------

    @classmethod
    def recover(
        cls,
        path: Path,
        memtable_limit: int = DEFAULT_MEMTABLE_LIMIT,
        sync: bool = True,
        auto_compact_tables: int = AUTO_COMPACT_TABLES,
        fault_hook: FaultHook | None = None,
    ) -> "ColumnFamily":
        """Open the column family at ``path``, replaying its commit log.

        Safe after an unclean shutdown: half-written tables are removed,
        segments left by an interrupted flush are folded back into the
        commit log and a torn final log record is discarded with a warning.
        """
        cf = cls(path, memtable_limit, sync, auto_compact_tables, fault_hook)
        try:
            path.mkdir(parents=True, exist_ok=True)
            cf._open()
        except OSError as e:
            raise StoreIoError(f"cannot open column family {path}: {e}") from e
        return cf

    def _open(self) -> None:
        d = self.directory
        for tmp in d.glob("*.tmp"):
            tmp.unlink()
        gens = list_generations(d)
        live = set(gens)
        for p in list(d.glob("gen-*.idx")) + list(d.glob("gen-*.bloom")):
            try:
                g = int(p.stem.split("-", 1)[1])
            except ValueError:
                continue
            if g not in live:
                log.warning("Removing orphan table file %s", p.name)
                p.unlink()
        self._sstables = [SSTable.open(d, g) for g in gens]

        segments = list_segments(d)
        unflushed: list[Path] = []
        replayed = 0
        for g, seg in segments:
            if g in live:
                seg.unlink()
                continue
            for r in replay(seg):
                self._memtable[r.id] = r
                replayed += 1
            unflushed.append(seg)
        rows = replay(d / COMMIT_LOG)
        for r in rows:
            self._memtable[r.id] = r
        replayed += len(rows)
        if unflushed:
            log.warning("Folding %d unflushed commit-log segment(s) back into %s", len(unflushed), COMMIT_LOG)
            rewrite(d / COMMIT_LOG, self._memtable.values(), sync=self.sync)
            for seg in unflushed:
                seg.unlink()

        self._next_gen = max(gens + [g for g, _ in segments], default=0) + 1
        self._log = CommitLog(d / COMMIT_LOG, sync=self.sync)
        self._closed = False
        log.info(
            "Opened %s.%s: %d tables, %d rows replayed from commit log",
            self.keyspace, self.name, len(self._sstables), replayed,
        )
        if len(self._memtable) >= self.memtable_limit:
            with self._maintenance_lock:
                self._flush_locked()

    def _hook(self, point: str) -> None:
        if self._fault_hook is not None:
            self._fault_hook(point)

    def _check_open(self) -> None:
        if self._closed:
            raise StoreClosed(f"column family {self.keyspace}.{self.name} is closed")

    def _check_writable(self) -> None:
        self._check_open()
        if self._failure is not None:
            raise StoreIoError(
                f"column family {self.keyspace}.{self.name} failed ({self._failure}); reopen it to recover"
            )

    def _fail(self, what: str, e: OSError) -> StoreIoError:
        self._failure = e
        log.error("%s.%s: %s failed, refusing further writes: %s", self.keyspace, self.name, what, e)
        return StoreIoError(f"{what} failed: {e}")

    # ----------------------------
    # Introspection
    # ----------------------------

    @property
    def sstables(self) -> tuple[SSTable, ...]:
        with self._state_lock:
            return tuple(self._sstables)

    @property
    def memtable_size(self) -> int:
        with self._state_lock:
            return len(self._memtable)

    @property
    def closed(self) -> bool:
        return self._closed

    # ----------------------------
    # Write path
    # ----------------------------

    def write(self, row: Row) -> None:
        self.write_batch([row])

    def write_batch(self, rows: Sequence[Row]) -> None:
        """Acknowledge ``rows`` once they are in the commit log and the memtable."""
        if not rows:
            return
        with self._write_lock:
            self._check_writable()
            assert self._log is not None
            try:
                self._log.append(rows)
            except OSError as e:
                raise StoreIoError(f"commit log append failed: {e}") from e
            self._hook("write.logged")
            with self._state_lock:
                for r in rows:
                    self._memtable[r.id] = r
        self._maybe_flush()

    def _maybe_flush(self) -> None:
        # A writer only waits for a running flush once the memtable is twice its limit.
        while True:
            size = self.memtable_size
            if size < self.memtable_limit or self._closed or self._failure is not None:
                return
            if not self._maintenance_lock.acquire(blocking=size >= 2 * self.memtable_limit):
                return
            try:
                if not self._closed and self._failure is None and self.memtable_size >= self.memtable_limit:
                    self._flush_locked()
            finally:
                self._maintenance_lock.release()

    def flush(self) -> SSTable:
        with self._maintenance_lock:
            return self._flush_locked()

    def _flush_locked(self) -> SSTable:
        with self._write_lock:
            self._check_writable()
            with self._state_lock:
                if not self._memtable:
                    raise EmptyMemtable(f"{self.keyspace}.{self.name}: nothing to flush")
                gen = self._next_gen
            segment = segment_path(self.directory, gen)
            assert self._log is not None
            try:
                self._log.rotate(segment)
            except OSError as e:
                raise self._fail("commit log rotation", e) from e
            with self._state_lock:
                frozen = self._memtable
                self._flushing = frozen
                self._memtable = {}
                self._next_gen = gen + 1

        self._hook("flush.begin")
        rows = sorted(frozen.values(), key=lambda r: r.id)
        try:
            table = SSTable.write(self.directory, gen, rows, sync=self.sync, fault_hook=self._fault_hook)
        except OSError as e:
            raise self._fail(f"flush of generation {gen}", e) from e
        with self._state_lock:
            self._sstables.append(table)
            self._flushing = {}
        self._hook("flush.table_installed")
        try:
            segment.unlink()
        except OSError as e:
            raise self._fail(f"removal of {segment.name}", e) from e
        self._hook("flush.log_truncated")
        if self.auto_compact_tables and len(self.sstables) >= self.auto_compact_tables:
            self._compact_locked()
        return table

    def compact(self) -> SSTable:
        with self._maintenance_lock:
            self._check_writable()
            return self._compact_locked()

    def _compact_locked(self) -> SSTable:
        with self._state_lock:
            old = list(self._sstables)
            if len(old) < 2:
                raise NotEnoughTables(f"compaction needs >= 2 tables, have {len(old)}")
            gen = self._next_gen
            self._next_gen = gen + 1
        self._hook("compact.begin")
        merged: dict[str, Row] = {}
        try:
            for t in old:  # oldest generation first; later versions win
                for r in t.rows():
                    merged[r.id] = r
            rows = [merged[k] for k in sorted(merged)]
            table = SSTable.write(self.directory, gen, rows, sync=self.sync, fault_hook=self._fault_hook)
        except OSError as e:
            raise StoreIoError(f"compaction into generation {gen} failed: {e}") from e
        with self._state_lock:
            self._sstables = [table]
        self._hook("compact.table_installed")
        for t in old:
            try:
                t.delete_files(self._fault_hook)
            except OSError as e:
                log.warning("Could not delete %s: %s", t.path, e)
            self._hook("compact.table_deleted")
        log.info("Compacted %d tables into gen-%d (%d rows)", len(old), gen, len(rows))
        return table

    # ----------------------------
    # Read path
    # ----------------------------

    def read(self, row_id: str) -> Optional[Row]:
        with self._state_lock:
            self._check_open()
            row = self._memtable.get(row_id)
            if row is None:
                row = self._flushing.get(row_id)
            tables = list(self._sstables)
        if row is not None:
            return row
        try:
            return _read_tables(tables, row_id)
        except (OSError, ValueError) as e:
            raise StoreIoError(f"read of {row_id!r} failed: {e}") from e

    def read_all(self) -> dict[str, Row]:
        """Latest version of every row (last write wins)."""
        with self._state_lock:
            self._check_open()
            mem = dict(self._memtable)
            flushing = self._flushing
            tables = list(self._sstables)
        try:
            out = _merge_tables(tables)
        except (OSError, ValueError) as e:
            raise StoreIoError(f"scan failed: {e}") from e
        out.update(flushing)
        out.update(mem)
        return out

    def count(self) -> int:
        return len(self.read_all())

    def scan_latest(self, n: int) -> list[Row]:
        """The ``n`` rows with greatest processed_at (ties: id descending), newest first."""
        if n < 1:
            raise ValueError(f"n must be positive, got {n}")
        return latest(self.read_all().values(), n)

    # ----------------------------
    # Lifecycle
    # ----------------------------

    def close(self, flush: bool = False) -> None:
        with self._maintenance_lock:
            if self._closed:
                return
            if flush and self.memtable_size and self._failure is None:
                self._flush_locked()
            with self._write_lock, self._state_lock:
                self._closed = True
                tables = list(self._sstables)
            assert self._log is not None
            self._log.close()
            for t in tables:
                t.close()

    def __enter__(self) -> "ColumnFamily":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def _read_tables(tables: Sequence[SSTable], row_id: str) -> Optional[Row]:
    for t in reversed(tables):
        if not t.may_contain(row_id):
            continue
        hit = t.get(row_id)
        if hit is not None:
            return hit
    return None


def _merge_tables(tables: Sequence[SSTable]) -> dict[str, Row]:
    out: dict[str, Row] = {}
    for t in tables:
        for r in t.rows():
            out[r.id] = r
    return out


# ----------------------------
# Read-only view
# ----------------------------

SNAPSHOT_ATTEMPTS = 50


class StoreView:
    """Read-only view of a column family that another process may be writing.

    Nothing on disk is touched: no tmp cleanup, no torn-tail truncation, no
    flush and no log handle. Every read lists the table generations and
    replays the commit log again, so rows written after the view was opened
    show up. A read retries until it sees the same files before and after.
    """

    def __init__(self, directory: Path) -> None:
        self.directory = directory
        self.keyspace = directory.parent.name
        self.name = directory.name
        self._tables: dict[int, SSTable] = {}
        self._lock = threading.Lock()
        self._closed = False

    @classmethod
    def open(cls, path: Path) -> "StoreView":
        if not path.is_dir():
            raise StoreIoError(f"no column family at {path}")
        view = cls(path)
        log.info("Opened read-only view of %s.%s", view.keyspace, view.name)
        return view

    @property
    def closed(self) -> bool:
        return self._closed

    def _listing(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        gens = tuple(list_generations(self.directory))
        segs = tuple(g for g, _ in list_segments(self.directory))
        return gens, segs

    def _tables_for(self, gens: Sequence[int]) -> list[SSTable]:
        for g in [g for g in self._tables if g not in gens]:
            self._tables.pop(g).close()
        for g in gens:
            if g not in self._tables:
                self._tables[g] = SSTable.open(self.directory, g)
        return [self._tables[g] for g in gens]

    def _snapshot(self) -> tuple[list[SSTable], dict[str, Row]]:
        d = self.directory
        for _ in range(SNAPSHOT_ATTEMPTS):
            try:
                before = self._listing()
                gens, segs = before
                logged: dict[str, Row] = {}
                for g in segs:
                    if g not in gens:
                        for r in replay(segment_path(d, g), repair=False):
                            logged[r.id] = r
                for r in replay(d / COMMIT_LOG, repair=False):
                    logged[r.id] = r
                tables = self._tables_for(gens)
                if self._listing() == before:
                    return tables, logged
            except FileNotFoundError:
                pass
            time.sleep(0.001)
        raise StoreIoError(f"{self.keyspace}.{self.name} kept changing during {SNAPSHOT_ATTEMPTS} read attempts")

    def read(self, row_id: str) -> Optional[Row]:
        with self._lock:
            if self._closed:
                raise StoreClosed(f"view of {self.keyspace}.{self.name} is closed")
            tables, logged = self._snapshot()
            if row_id in logged:
                return logged[row_id]
            try:
                return _read_tables(tables, row_id)
            except (OSError, ValueError) as e:
                raise StoreIoError(f"read of {row_id!r} failed: {e}") from e

    def read_all(self) -> dict[str, Row]:
        with self._lock:
            if self._closed:
                raise StoreClosed(f"view of {self.keyspace}.{self.name} is closed")
            tables, logged = self._snapshot()
            try:
                out = _merge_tables(tables)
            except (OSError, ValueError) as e:
                raise StoreIoError(f"scan failed: {e}") from e
        out.update(logged)
        return out

    def count(self) -> int:
        return len(self.read_all())

    def scan_latest(self, n: int) -> list[Row]:
        if n < 1:
            raise ValueError(f"n must be positive, got {n}")
        return latest(self.read_all().values(), n)

    def close(self) -> None:
        with self._lock:
            self._closed = True
            for t in self._tables.values():
                t.close()
            self._tables.clear()

    def __enter__(self) -> "StoreView":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


class Keyspace:
    """Container of column families under ``<root>/<name>``."""

    def __init__(self, root: Path, name: str) -> None:
        self.root = root
        self.name = safe_component(name, "keyspace")
        self.path = child_dir(root, self.name)

    def column_family_path(self, name: str) -> Path:
        return child_dir(self.root, self.name, safe_component(name, "column family"))

    def column_family(self, name: str, **options) -> ColumnFamily:
        return ColumnFamily.recover(self.column_family_path(name), **options)

    def view(self, name: str) -> StoreView:
        return StoreView.open(self.column_family_path(name))

    def column_families(self) -> list[str]:
        if not self.path.exists():
            return []
        return sorted(p.name for p in self.path.iterdir() if p.is_dir())


def open_store(root: Path, keyspace: str, column_family: str, **options) -> ColumnFamily:
    return Keyspace(root, keyspace).column_family(column_family, **options)
