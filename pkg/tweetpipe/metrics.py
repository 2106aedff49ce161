"""Pipeline measurements: event capture, cumulative series and run summaries.

Two latency notions are kept apart:

* drain latency (``ExperimentSummary.latency_min``): total processing span
  minus the ingest window, the number reported per experiment;
* per-message latency (produce -> processed), reported as p50/p95/p99.
  This is an extra diagnostic and plays no part in speedup.

All timestamps are monotonic milliseconds.
"""
from __future__ import annotations

import csv
import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

log = logging.getLogger("tweetpipe.metrics")

PERCENTILES = (50.0, 95.0, 99.0)


class NoProcessedEvents(ValueError):
    pass


class EventKind(Enum):
    RECEIVED = "Received"
    PROCESSED = "Processed"


@dataclass(frozen=True)
class PipelineEvent:
    kind: EventKind
    ts: float  # monotonic ms
    record_count: int

    def __post_init__(self) -> None:
        if self.record_count < 1:
            raise ValueError(f"record_count must be positive, got {self.record_count}")


@dataclass
class _Shard:
    events: list[PipelineEvent] = field(default_factory=list)
    received: int = 0
    processed: int = 0
    latencies_ms: list[float] = field(default_factory=list)


class MetricsRecorder:
    """Event sink shared by every pipeline thread.

    Each recording thread appends to its own shard, so ``record`` takes no
    lock after a thread's first call. Readers merge the shards; call them on
    a quiesced recorder for exact numbers.
    """

    def __init__(self) -> None:
        self._local = threading.local()
        self._shards: list[_Shard] = []
        self._register_lock = threading.Lock()
        self._lag = 0
        self._max_lag = 0

    def _shard(self) -> _Shard:
        shard = getattr(self._local, "shard", None)
        if shard is None:
            shard = _Shard()
            with self._register_lock:
                self._shards.append(shard)
            self._local.shard = shard
        return shard

    def record(self, event: PipelineEvent) -> None:
        shard = self._shard()
        shard.events.append(event)
        if event.kind is EventKind.RECEIVED:
            shard.received += event.record_count
        else:
            shard.processed += event.record_count

    def record_latencies(self, latencies_ms: Iterable[float]) -> None:
        self._shard().latencies_ms.extend(latencies_ms)

    def set_source_lag(self, lag: int) -> None:
        """Records not yet drained from the source after the latest batch."""
        self._lag = lag
        if lag > self._max_lag:
            self._max_lag = lag

    # ----------------------------
    # Readers
    # ----------------------------

    def _snapshot(self) -> list[_Shard]:
        with self._register_lock:
            return list(self._shards)

    @property
    def received_total(self) -> int:
        return sum(s.received for s in self._snapshot())

    @property
    def processed_total(self) -> int:
        return sum(s.processed for s in self._snapshot())

    @property
    def source_lag(self) -> int:
        return self._lag

    @property
    def max_source_lag(self) -> int:
        return self._max_lag

    def events(self) -> list[PipelineEvent]:
        merged = [e for s in self._snapshot() for e in list(s.events)]
        merged.sort(key=lambda e: e.ts)
        return merged

    def latency_percentiles(self) -> Optional[dict[str, float]]:
        values = [v for s in self._snapshot() for v in list(s.latencies_ms)]
        if not values:
            return None
        pct = np.percentile(np.asarray(values, dtype=np.float64), PERCENTILES)
        return {f"p{int(p)}": float(v) for p, v in zip(PERCENTILES, pct)}


# ----------------------------
# Series
# ----------------------------

@dataclass(frozen=True)
class Series:
    bin_s: int
    received: np.ndarray   # cumulative per bin
    processed: np.ndarray  # cumulative per bin

    def __len__(self) -> int:
        return int(self.received.shape[0])

    def rows(self) -> list[tuple[int, int, int]]:
        """(bin start in seconds, received_cum, processed_cum) per bin."""
        return [
            (i * self.bin_s, int(r), int(p))
            for i, (r, p) in enumerate(zip(self.received, self.processed))
        ]


def aggregate_series(events: Sequence[PipelineEvent], bin_s: int = 10, origin_ms: float | None = None) -> Series:
    """Cumulative received/processed counts per ``bin_s`` bin.

    Bins start at ``origin_ms`` (default: the earliest event).
    """
    if bin_s < 1:
        raise ValueError(f"bin_s must be >= 1, got {bin_s}")
    if not events:
        empty = np.zeros(0, dtype=np.int64)
        return Series(bin_s, empty, empty.copy())
    ts = np.fromiter((e.ts for e in events), dtype=np.float64, count=len(events))
    counts = np.fromiter((e.record_count for e in events), dtype=np.int64, count=len(events))
    is_recv = np.fromiter((e.kind is EventKind.RECEIVED for e in events), dtype=bool, count=len(events))
    origin = float(ts.min()) if origin_ms is None else origin_ms
    bins = np.floor((ts - origin) / (bin_s * 1000.0)).astype(np.int64)
    if bins.min() < 0:
        raise ValueError("event before series origin")
    n = int(bins.max()) + 1
    received = np.bincount(bins[is_recv], weights=counts[is_recv], minlength=n).astype(np.int64)
    processed = np.bincount(bins[~is_recv], weights=counts[~is_recv], minlength=n).astype(np.int64)
    return Series(bin_s, np.cumsum(received), np.cumsum(processed))


# ----------------------------
# Summaries
# ----------------------------

@dataclass(frozen=True)
class ExperimentSummary:
    tweets_processed: int
    processed_time_min: float
    latency_min: float
    speedup_pct: Optional[float] = None
    experiment: str = ""
    latency_percentiles_ms: Optional[dict[str, float]] = None
    max_source_lag: int = 0
    record_cost_ms: float = 0.0  # emulated service time per record, 0 when off


def speedup(baseline_min: float, current_min: float) -> float:
    if current_min <= 0:
        raise ValueError(f"processing time must be positive, got {current_min}")
    return 100.0 * baseline_min / current_min


def summarize(
    events: Sequence[PipelineEvent],
    ingest_duration_min: float,
    baseline_processed_time_min: Optional[float] = None,
    experiment: str = "",
) -> ExperimentSummary:
    """Processing span from the first Received to the last Processed event."""
    processed = [e for e in events if e.kind is EventKind.PROCESSED]
    if not processed:
        raise NoProcessedEvents("no Processed events recorded")
    received = [e.ts for e in events if e.kind is EventKind.RECEIVED]
    start = min(received) if received else min(e.ts for e in events)
    end = max(e.ts for e in processed)
    processed_time_min = (end - start) / 60_000.0
    # A run whose last batch lands inside the ingest window has no drain latency.
    latency_min = max(0.0, processed_time_min - ingest_duration_min)
    pct = None
    if baseline_processed_time_min is not None and processed_time_min > 0:
        pct = speedup(baseline_processed_time_min, processed_time_min)
    return ExperimentSummary(
        tweets_processed=sum(e.record_count for e in processed),
        processed_time_min=processed_time_min,
        latency_min=latency_min,
        speedup_pct=pct,
        experiment=experiment,
    )


# ----------------------------
# CSV exports
# ----------------------------

SUMMARY_COLUMNS = ("experiment", "tweets_processed", "processed_time_m", "latency_m", "speedup_pct")


def write_events_csv(events: Iterable[PipelineEvent], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(("kind", "ts_ms", "count"))
        for e in events:
            w.writerow((e.kind.value, f"{e.ts:.3f}", e.record_count))


def write_series_csv(series: Series, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(("bin_s", "received_cum", "processed_cum"))
        w.writerows(series.rows())


def summary_row(s: ExperimentSummary) -> tuple[str, int, str, str, str]:
    return (
        s.experiment,
        s.tweets_processed,
        f"{s.processed_time_min:.3f}",
        f"{s.latency_min:.3f}",
        "-" if s.speedup_pct is None else f"{s.speedup_pct:.1f}",
    )


def cost_note(summaries: Sequence[ExperimentSummary]) -> Optional[str]:
    """One-line notice when any run carried an emulated per-record cost."""
    costs = sorted({s.record_cost_ms for s in summaries if s.record_cost_ms > 0})
    if not costs:
        return None
    listed = ", ".join(f"{c:g}" for c in costs)
    return f"emulated per-record cost {listed} ms: speedups measure that cost, not classifier work"


def write_summary_csv(summaries: Sequence[ExperimentSummary], path: Path, incomplete: str | None = None) -> None:
    """Table of experiment summaries; ``incomplete`` appends a ``# incomplete:`` marker.

    A ``# note:`` line ahead of the header records an emulated per-record cost.
    """
    with path.open("w", newline="", encoding="utf-8") as f:
        note = cost_note(summaries)
        if note is not None:
            f.write(f"# note: {note}\n")
        w = csv.writer(f)
        w.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            w.writerow(summary_row(s))
        if incomplete is not None:
            f.write(f"# incomplete: {' '.join(incomplete.split())}\n")


def read_summary_csv(path: Path) -> list[dict[str, str]]:
    with path.open(newline="", encoding="utf-8") as f:
        return [row for row in csv.DictReader(l for l in f if not l.startswith("#"))]
