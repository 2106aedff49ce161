"""Crash-recovery tests.

A failpoint raises SimulatedCrash somewhere in the write, flush or
compaction path; the crashed instance is abandoned and the directory is
reopened with ``ColumnFamily.recover``. Every acknowledged write must
survive with its acknowledged value, and nothing that was never written
may appear.
"""
import logging
import random

import pytest

from tests.conftest import SimulatedCrash
from tweetpipe.classifier import Sentiment
from tweetpipe.rows import Row
from tweetpipe.store import ColumnFamily, CorruptLog

ALL_POINTS = {
    "write.logged",
    "flush.begin",
    "flush.table_installed",
    "flush.log_truncated",
    "compact.begin",
    "compact.table_installed",
    "compact.table_deleted",
    "sstable.written",
    "sstable.meta_renamed",
    "sstable.sst_deleted",
}


def _batches():
    """Deterministic workload: 30 batches of 2 rows over 12 ids, with overwrites."""
    out = []
    for i in range(30):
        batch = []
        for j in range(2):
            n = (i * 2 + j) % 12
            sentiment = Sentiment.POSITIVE if (i + j) % 2 else Sentiment.NEGATIVE
            batch.append(Row(f"row-{n:02d}", f"v{i}.{j}", sentiment, 1_000 + i))
        out.append(batch)
    return out


def _open(path, hook=None):
    return ColumnFamily.recover(path, memtable_limit=5, sync=False, auto_compact_tables=3, fault_hook=hook)


def _run_until_crash(path, hook):
    """Apply the workload; returns (acknowledged, in-flight batch or None)."""
    acked = {}
    store = _open(path, hook)
    for batch in _batches():
        try:
            store.write_batch(batch)
        except SimulatedCrash:
            return acked, batch
        for r in batch:
            acked[r.id] = r
    store.close()
    return acked, None


def _count_points(temp_dir):
    seen = []
    _run_until_crash(temp_dir / "dry-run", seen.append)
    return seen


class TestCrashSweep:
    """Crash at every failpoint the workload reaches."""

    def test_workload_reaches_every_point(self, temp_dir):
        """Test the workload exercises all failpoints at least once."""
        assert set(_count_points(temp_dir)) == ALL_POINTS

    @pytest.mark.slow
    def test_sweep(self, temp_dir, crash_at):
        """Test recovery after a crash at each of the first 60 failpoint hits."""
        total = len(_count_points(temp_dir))
        assert total >= 20
        hit_points = set()
        for n in range(1, min(total, 60) + 1):
            path = temp_dir / f"crash-{n}"
            hook = crash_at(n)
            acked, in_flight = _run_until_crash(path, hook)
            assert in_flight is not None, f"no crash at hit {n}"
            hit_points.add(hook.calls["hit"])

            pending = {r.id: r for r in in_flight}
            with _open(path) as recovered:
                got = recovered.read_all()
                for rid, row in acked.items():
                    allowed = {row} | ({pending[rid]} if rid in pending else set())
                    assert got.get(rid) in allowed, f"crash at {hook.calls['hit']}: lost {rid}"
                    assert recovered.read(rid) == got[rid]
                assert set(got) <= set(acked) | set(pending)
                assert not list(path.glob("*.tmp"))
        assert hit_points == ALL_POINTS

    def test_crash_after_log_before_memtable(self, temp_dir, crash_at):
        """Test a batch that reached the log is recovered even though it was not acknowledged."""
        path = temp_dir / "cf"
        store = _open(path, crash_at(1, {"write.logged"}))
        row = Row("only", "hello", Sentiment.POSITIVE, 5)
        with pytest.raises(SimulatedCrash):
            store.write(row)
        with _open(path) as recovered:
            assert recovered.read("only") == row

    def test_rotated_segment_folded_back(self, temp_dir, crash_at):
        """Test a segment left by a flush that never wrote its table is replayed and removed."""
        path = temp_dir / "cf"
        store = ColumnFamily.recover(path, memtable_limit=100, sync=False, fault_hook=crash_at(1, {"flush.begin"}))
        store.write_batch([Row(f"r{i}", "old", Sentiment.POSITIVE, i) for i in range(3)])
        with pytest.raises(SimulatedCrash):
            store.flush()
        store.write(Row("r1", "new", Sentiment.NEGATIVE, 9))
        assert (path / "commit-1.log").exists()

        with ColumnFamily.recover(path, memtable_limit=100, sync=False) as recovered:
            assert not list(path.glob("commit-*.log"))
            assert recovered.read("r1").tweet_text == "new"
            assert recovered.count() == 3
            assert recovered.sstables == ()
            table = recovered.flush()
            assert table.generation == 2
        with ColumnFamily.recover(path, memtable_limit=100, sync=False) as reopened:
            assert reopened.read("r1").tweet_text == "new"
            assert reopened.count() == 3

    def test_installed_segment_dropped(self, temp_dir, crash_at):
        """Test a segment whose table was installed is deleted without replay."""
        path = temp_dir / "cf"
        store = ColumnFamily.recover(path, memtable_limit=100, sync=False,
                                     fault_hook=crash_at(1, {"flush.table_installed"}))
        store.write_batch([Row(f"r{i}", "t", Sentiment.POSITIVE, i) for i in range(3)])
        with pytest.raises(SimulatedCrash):
            store.flush()
        assert (path / "commit-1.log").exists() and (path / "gen-1.sst").exists()
        with ColumnFamily.recover(path, memtable_limit=100, sync=False) as recovered:
            assert not (path / "commit-1.log").exists()
            assert recovered.memtable_size == 0
            assert recovered.count() == 3

    def test_orphan_table_files_removed(self, temp_dir, crash_at):
        """Test index and bloom files without their .sst are deleted on recovery."""
        path = temp_dir / "cf"
        store = _open(path, crash_at(1, {"sstable.meta_renamed"}))
        with pytest.raises(SimulatedCrash):
            store.write_batch([Row(f"r{i}", "t", Sentiment.NEGATIVE, i) for i in range(5)])
        assert (path / "gen-1.idx").exists() and not (path / "gen-1.sst").exists()
        with ColumnFamily.recover(path, memtable_limit=100, sync=False) as recovered:
            assert not (path / "gen-1.idx").exists()
            assert not (path / "gen-1.bloom").exists()
            assert recovered.count() == 5


class TestCommitLogDamage:
    """Torn tails and corruption."""

    def _write_unflushed(self, path, n):
        store = _open(path)
        for i in range(n):
            store.write(Row(f"r{i}", f"text {i}", Sentiment.POSITIVE, i))
        store.close()
        return path / "commit.log"

    def test_torn_tail_dropped(self, temp_dir, caplog):
        """Test a half-written final record is discarded with a warning."""
        log_path = self._write_unflushed(temp_dir / "cf", 3)
        data = log_path.read_bytes()
        log_path.write_bytes(data[:-5])
        with caplog.at_level(logging.WARNING, logger="tweetpipe.store"):
            with _open(temp_dir / "cf") as recovered:
                assert sorted(recovered.read_all()) == ["r0", "r1"]
        assert "torn" in caplog.text

    def test_bad_checksum_on_last_record(self, temp_dir):
        """Test a final record failing its checksum is treated as torn."""
        log_path = self._write_unflushed(temp_dir / "cf", 2)
        data = bytearray(log_path.read_bytes())
        data[-1] ^= 0xFF
        log_path.write_bytes(bytes(data))
        with _open(temp_dir / "cf") as recovered:
            assert sorted(recovered.read_all()) == ["r0"]

    def test_writes_after_torn_tail(self, temp_dir):
        """Test the log is usable after a torn tail was cut off."""
        path = temp_dir / "cf"
        log_path = self._write_unflushed(path, 2)
        log_path.write_bytes(log_path.read_bytes() + b"\x07\x00")
        with _open(path) as store:
            store.write(Row("r9", "later", Sentiment.NEGATIVE, 9))
        with _open(path) as store:
            assert sorted(store.read_all()) == ["r0", "r1", "r9"]

    def test_corruption_before_tail(self, temp_dir):
        """Test a checksum mismatch in the middle of the log is an error."""
        log_path = self._write_unflushed(temp_dir / "cf", 3)
        data = bytearray(log_path.read_bytes())
        data[0] ^= 0xFF
        log_path.write_bytes(bytes(data))
        with pytest.raises(CorruptLog):
            _open(temp_dir / "cf")


class TestRandomCrashes:
    """Large random workload with crashes spread over its whole run."""

    @staticmethod
    def _workload(seed):
        rng = random.Random(seed)
        batches, written = [], 0
        while written < 10_000:
            size = min(rng.randint(1, 40), 10_000 - written)
            batches.append([
                Row(f"k{rng.randint(0, 2999):04d}", f"w{written + j}", rng.choice(list(Sentiment)), written + j)
                for j in range(size)
            ])
            written += size
        return batches

    @staticmethod
    def _apply(path, batches, hook):
        acked = {}
        store = ColumnFamily.recover(path, memtable_limit=400, sync=False, auto_compact_tables=4, fault_hook=hook)
        for batch in batches:
            try:
                store.write_batch(batch)
            except SimulatedCrash:
                return acked, batch
            for r in batch:
                acked[r.id] = r
        store.close()
        return acked, None

    @pytest.mark.slow
    def test_ten_thousand_writes(self, temp_dir, crash_at):
        """Test 10,000 random writes recover to the acknowledged state at 25 crash points."""
        batches = self._workload(77)
        seen = []
        self._apply(temp_dir / "dry-run", batches, seen.append)
        points = sorted({1 + (i * (len(seen) - 1)) // 24 for i in range(25)})
        assert len(points) >= 20

        structural = 0
        for n in points:
            path = temp_dir / f"crash-{n}"
            hook = crash_at(n)
            acked, in_flight = self._apply(path, batches, hook)
            assert in_flight is not None
            structural += hook.calls["hit"] != "write.logged"

            pending = {r.id: r for r in in_flight}
            with ColumnFamily.recover(path, memtable_limit=400, sync=False) as recovered:
                got = recovered.read_all()
            expected = dict(acked)
            for rid, row in pending.items():
                if got.get(rid) == row:
                    expected[rid] = row
            assert got == expected
        assert structural > 0
