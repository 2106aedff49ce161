"""Micro-batch streaming from a broker topic through a dataset pipeline into a sink.

Every ``interval_ms`` the driver drains all new records of every partition
into one ``MicroBatch``, spreads it over ``workers`` partitions, applies the
pipeline, writes the resulting rows to the sink and only then commits the
drained offsets for its consumer group.
"""
from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Protocol, Sequence

from .broker import Broker, ConsumerPosition, Record, monotonic_ms
from .classifier import NaiveBayesModel, classify
from .dataset import Dataset, from_records
from .ids import make_row_id
from .metrics import EventKind, MetricsRecorder, PipelineEvent
from .rows import Row
from .text import TokenPipeline
from .workers import StreamError, WorkerGroup

log = logging.getLogger("tweetpipe.stream")

Pipeline = Callable[[Dataset], Dataset]


class SinkError(StreamError):
    pass


class RowSink(Protocol):
    def write_batch(self, rows: Sequence[Row]) -> None: ...


@dataclass
class ListSink:
    """In-memory sink."""

    rows: list[Any] = field(default_factory=list)

    def write_batch(self, rows: Sequence[Any]) -> None:
        self.rows.extend(rows)


@dataclass(frozen=True)
class MicroBatch:
    batch_id: int
    interval_ms: int
    records: tuple[Record, ...]
    # partition -> [start, end) offsets drained in this batch
    drained_offsets: dict[int, tuple[int, int]]


@dataclass(frozen=True)
class BatchInfo:
    batch_id: int
    record_count: int
    rows_written: int
    drained_offsets: dict[int, tuple[int, int]]
    started_ms: float
    finished_ms: float


@dataclass(frozen=True)
class ClassifyRecord:
    """Map stage turning a broker record into a stored row.

    ``record_cost_ms`` adds an emulated per-record service time; it sleeps,
    so it overlaps across workers the way real per-record work would on
    separate cores.
    """

    model: NaiveBayesModel
    pipeline: TokenPipeline = field(default_factory=TokenPipeline)
    record_cost_ms: float = 0.0

    def __call__(self, record: Record) -> Row:
        text = record.payload.decode("utf-8", errors="replace")
        sentiment = classify(self.model, text, self.pipeline)
        if self.record_cost_ms > 0:
            time.sleep(self.record_cost_ms / 1000.0)
        return Row(
            id=make_row_id(record.topic, record.partition, record.offset),
            tweet_text=text,
            sentiment=sentiment,
            processed_at=time.time_ns() // 1_000_000,
        )


def classification_pipeline(stage: ClassifyRecord) -> Pipeline:
    def plan(ds: Dataset) -> Dataset:
        return ds.map(stage)
    return plan


class StreamHandle:
    """A running stream; ``stop()`` drains what is left and joins."""

    def __init__(
        self,
        broker: Broker,
        topic: str,
        interval_ms: int,
        pipeline: Pipeline,
        sink: RowSink,
        workers: WorkerGroup,
        group_id: str,
        metrics: MetricsRecorder,
        owns_workers: bool,
    ) -> None:
        self.broker = broker
        self.topic = topic
        self.interval_ms = interval_ms
        self.pipeline = pipeline
        self.sink = sink
        self.workers = workers
        self.group_id = group_id
        self.metrics = metrics
        self._owns_workers = owns_workers
        partitions = broker.topic(topic).partition_count
        self._positions = [broker.fetch_committed(group_id, topic, p) for p in range(partitions)]
        self._next_batch_id = 0
        self._stop = threading.Event()
        self._error: BaseException | None = None
        self.history: list[BatchInfo] = []
        self._thread = threading.Thread(target=self._loop, name=f"tweetpipe-stream-{topic}", daemon=True)

    # ----------------------------
    # Control
    # ----------------------------

    def start(self) -> "StreamHandle":
        self._thread.start()
        return self

    @property
    def running(self) -> bool:
        return self._thread.is_alive()

    @property
    def error(self) -> BaseException | None:
        return self._error

    @property
    def positions(self) -> list[int]:
        return list(self._positions)

    def stop(self, timeout: float | None = None) -> None:
        """Drain remaining records, stop, and re-raise a batch failure if one ended the stream."""
        self._stop.set()
        self.join(timeout)

    def join(self, timeout: float | None = None) -> None:
        self._thread.join(timeout)
        if self._thread.is_alive():
            raise StreamError(f"stream on {self.topic} did not stop within {timeout}s")
        if self._owns_workers:
            self.workers.close()
        if self._error is not None:
            raise self._error

    # ----------------------------
    # Driver loop
    # ----------------------------

    def _loop(self) -> None:
        interval = self.interval_ms / 1000.0
        next_tick = time.monotonic() + interval
        try:
            while not self._stop.wait(max(0.0, next_tick - time.monotonic())):
                next_tick += interval
                self.run_once()
                if time.monotonic() > next_tick:
                    # Running behind: start the next batch right away.
                    next_tick = time.monotonic()
            while self.run_once():
                pass
        except BaseException as e:
            self._error = e
            log.error("Stream on %s stopped: %s", self.topic, e)

    def drain(self) -> Optional[MicroBatch]:
        ends = self.broker.end_offsets(self.topic)
        records: list[Record] = []
        ranges: dict[int, tuple[int, int]] = {}
        for p, end in enumerate(ends):
            start = self._positions[p]
            if end > start:
                records.extend(self.broker.consume(self.topic, p, start, end - start))
                ranges[p] = (start, end)
        if not records:
            self.metrics.set_source_lag(0)
            return None
        batch = MicroBatch(self._next_batch_id, self.interval_ms, tuple(records), ranges)
        self._next_batch_id += 1
        return batch

    def run_once(self) -> bool:
        """Process one micro-batch; False when there was nothing to drain."""
        batch = self.drain()
        if batch is None:
            return False
        started = monotonic_ms()
        # Received is stamped at arrival in the broker, not at drain time.
        arrived = min(r.produce_ts for r in batch.records)
        self.metrics.record(PipelineEvent(EventKind.RECEIVED, arrived, len(batch.records)))

        ds = from_records(batch.records, self.workers.worker_count, self.workers)
        rows = self.pipeline(ds).collect()
        self._write(rows, batch.batch_id)

        finished = monotonic_ms()
        self.metrics.record(PipelineEvent(EventKind.PROCESSED, finished, len(batch.records)))
        self.metrics.record_latencies(finished - r.produce_ts for r in batch.records)

        for p, (_, end) in batch.drained_offsets.items():
            self.broker.commit_offset(ConsumerPosition(self.group_id, self.topic, p, end))
            self._positions[p] = end
        lag = sum(self.broker.end_offsets(self.topic)) - sum(self._positions)
        self.metrics.set_source_lag(lag)

        info = BatchInfo(batch.batch_id, len(batch.records), len(rows), batch.drained_offsets, started, finished)
        self.history.append(info)
        log.debug(
            "Batch %d: %d records in %.1f ms, lag %d",
            info.batch_id, info.record_count, finished - started, lag,
        )
        return True

    def _write(self, rows: Sequence[Row], batch_id: int) -> None:
        if not rows:
            return
        try:
            self.sink.write_batch(rows)
            return
        except Exception as e:
            log.warning("Sink write of batch %d failed, retrying once: %s", batch_id, e)
        try:
            self.sink.write_batch(rows)
        except Exception as e:
            raise SinkError(f"sink write of batch {batch_id} failed twice: {e}") from e


def run_streaming(
    source: Broker,
    topic: str,
    interval_ms: int,
    pipeline: Pipeline,
    sink: RowSink,
    workers: int | WorkerGroup = 1,
    group_id: str = "tweetpipe-stream",
    metrics: MetricsRecorder | None = None,
    executor: str = "thread",
) -> StreamHandle:
    """Start a stream over ``topic``; ``workers`` is a count or an existing group."""
    if interval_ms < 1:
        raise ValueError(f"interval_ms must be positive, got {interval_ms}")
    source.topic(topic)
    owns = not isinstance(workers, WorkerGroup)
    group = WorkerGroup(workers, executor) if owns else workers
    handle = StreamHandle(
        source, topic, interval_ms, pipeline, sink, group, group_id,
        metrics or MetricsRecorder(), owns_workers=owns,
    )
    log.info("Streaming %s every %d ms with %d workers", topic, interval_ms, group.worker_count)
    return handle.start()
