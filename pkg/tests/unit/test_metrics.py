import random
import threading

import numpy as np
import pytest

from tweetpipe.metrics import (
    EventKind,
    ExperimentSummary,
    MetricsRecorder,
    NoProcessedEvents,
    PipelineEvent,
    SUMMARY_COLUMNS,
    aggregate_series,
    cost_note,
    read_summary_csv,
    speedup,
    summarize,
    summary_row,
    write_events_csv,
    write_series_csv,
    write_summary_csv,
)

MIN = 60_000.0


def _recv(ts, n=1):
    return PipelineEvent(EventKind.RECEIVED, ts, n)


def _proc(ts, n=1):
    return PipelineEvent(EventKind.PROCESSED, ts, n)


class TestSummaries:
    """Processing time, drain latency and speedup."""

    def test_latency_from_span(self):
        """Test a 15 minute span over a 10 minute ingest gives 5 minutes latency."""
        s = summarize([_recv(0, 10), _proc(15 * MIN, 10)], ingest_duration_min=10)
        assert s.processed_time_min == pytest.approx(15.0)
        assert s.latency_min == pytest.approx(5.0)
        assert s.tweets_processed == 10
        assert s.speedup_pct is None

    def test_latency_clamped(self):
        """Test a run finishing inside the ingest window has zero latency."""
        s = summarize([_recv(0), _proc(0.5 * MIN)], ingest_duration_min=1)
        assert s.latency_min == 0.0

    def test_span_from_earliest_received(self):
        """Test the span runs from the earliest Received to the latest Processed event."""
        s = summarize([_recv(2 * MIN), _proc(5 * MIN), _recv(3 * MIN)], ingest_duration_min=0)
        assert s.processed_time_min == pytest.approx(3.0)

    def test_no_processed(self):
        """Test a run with nothing processed cannot be summarized."""
        with pytest.raises(NoProcessedEvents):
            summarize([_recv(0)], ingest_duration_min=1)

    @pytest.mark.parametrize("current,lo,hi", [(11.5, 129.9, 130.9), (10.7, 139.7, 140.7), (15.0, 100.0, 100.0)])
    def test_speedup(self, current, lo, hi):
        """Test speedup against a 15 minute baseline."""
        assert lo <= speedup(15.0, current) <= hi

    def test_speedup_zero_time(self):
        """Test a zero processing time is rejected."""
        with pytest.raises(ValueError):
            speedup(15.0, 0.0)

    def test_summarize_with_baseline(self):
        """Test the baseline produces a speedup percentage."""
        s = summarize([_recv(0), _proc(11.5 * MIN)], 10, baseline_processed_time_min=15.0, experiment="w2")
        assert s.speedup_pct == pytest.approx(130.43, abs=0.01)
        assert s.experiment == "w2"

    def test_event_count_must_be_positive(self):
        """Test events need a positive record count."""
        with pytest.raises(ValueError):
            PipelineEvent(EventKind.PROCESSED, 0.0, 0)


class TestSeries:
    """Binned cumulative counts."""

    def test_known_bins(self):
        """Test events fall into 10 s bins from the first event."""
        events = [_recv(1000, 5), _proc(4000, 5), _recv(12_000, 3), _proc(35_000, 3)]
        series = aggregate_series(events, bin_s=10)
        assert series.rows() == [(0, 5, 5), (10, 8, 5), (20, 8, 5), (30, 8, 8)]

    def test_empty(self):
        """Test no events give an empty series."""
        assert len(aggregate_series([])) == 0

    def test_event_before_origin(self):
        """Test an explicit origin after an event is rejected."""
        with pytest.raises(ValueError):
            aggregate_series([_recv(100)], origin_ms=200)

    def test_invalid_bin(self):
        """Test bins must be at least one second."""
        with pytest.raises(ValueError):
            aggregate_series([_recv(0)], bin_s=0)

    def test_random_against_loop(self):
        """Test cumulative series match a direct count and received dominates processed in every bin."""
        rng = random.Random(9)
        events = []
        for _ in range(1000):
            arrived, n = rng.uniform(0, 120_000), rng.randint(1, 50)
            events.append(PipelineEvent(EventKind.RECEIVED, arrived, n))
            events.append(PipelineEvent(EventKind.PROCESSED, arrived + rng.uniform(0, 15_000), n))
        rng.shuffle(events)
        series = aggregate_series(events, bin_s=7, origin_ms=0.0)
        for i, (start_s, recv, proc) in enumerate(series.rows()):
            end_ms = (i + 1) * 7000
            assert recv == sum(e.record_count for e in events if e.kind is EventKind.RECEIVED and e.ts < end_ms)
            assert proc == sum(e.record_count for e in events if e.kind is EventKind.PROCESSED and e.ts < end_ms)
            assert recv >= proc
        assert np.all(np.diff(series.received) >= 0)
        assert np.all(np.diff(series.processed) >= 0)
        assert series.processed[-1] == series.received[-1]


class TestRecorder:
    """Concurrent event capture."""

    def test_totals_and_events(self):
        """Test totals add up and events come out sorted by time."""
        m = MetricsRecorder()
        m.record(_recv(20, 3))
        m.record(_proc(30, 3))
        m.record(_recv(10, 2))
        assert m.received_total == 5
        assert m.processed_total == 3
        assert [e.ts for e in m.events()] == [10, 20, 30]

    def test_concurrent_record(self):
        """Test 8 threads recording 1,000 events each lose nothing."""
        m = MetricsRecorder()

        def work(k):
            for i in range(1000):
                m.record(_recv(float(k * 1000 + i), 2))
                m.record(_proc(float(k * 1000 + i) + 0.5, 1))

        threads = [threading.Thread(target=work, args=(k,)) for k in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert m.received_total == 16_000
        assert m.processed_total == 8_000
        assert len(m.events()) == 16_000

    def test_latency_percentiles(self):
        """Test percentiles over recorded per-message latencies."""
        m = MetricsRecorder()
        assert m.latency_percentiles() is None
        m.record_latencies(float(v) for v in range(1, 101))
        pct = m.latency_percentiles()
        assert pct["p50"] == pytest.approx(50.5)
        assert pct["p99"] == pytest.approx(99.01)

    def test_source_lag(self):
        """Test the latest and maximum source lag are tracked."""
        m = MetricsRecorder()
        for lag in (5, 40, 12):
            m.set_source_lag(lag)
        assert m.source_lag == 12
        assert m.max_source_lag == 40


class TestCsv:
    """Report files."""

    def test_summary_row_format(self):
        """Test numbers are rendered with fixed precision and a dash for no speedup."""
        assert summary_row(ExperimentSummary(10, 15.0, 5.0, None, "w1")) == ("w1", 10, "15.000", "5.000", "-")
        assert summary_row(ExperimentSummary(10, 11.5, 1.5, 130.434, "w2"))[-1] == "130.4"

    def test_summary_round_trip_with_marker(self, temp_dir):
        """Test the incomplete marker is written and skipped on read."""
        path = temp_dir / "summary.csv"
        write_summary_csv([ExperimentSummary(7, 1.0, 0.0, None, "w1")], path, incomplete="run w2 failed:\n boom")
        text = path.read_text(encoding="utf-8")
        assert text.rstrip().endswith("# incomplete: run w2 failed: boom")
        rows = read_summary_csv(path)
        assert rows == [{"experiment": "w1", "tweets_processed": "7", "processed_time_m": "1.000",
                         "latency_m": "0.000", "speedup_pct": "-"}]

    def test_emulated_cost_noted(self, temp_dir):
        """Test a summary with an emulated per-record cost carries a note line that readers skip."""
        path = temp_dir / "summary.csv"
        summaries = [
            ExperimentSummary(7, 2.0, 1.0, None, "1-worker", record_cost_ms=2.5),
            ExperimentSummary(7, 1.0, 0.0, 200.0, "2-worker", record_cost_ms=2.5),
        ]
        write_summary_csv(summaries, path)
        first = path.read_text(encoding="utf-8").splitlines()[0]
        assert first.startswith("# note: emulated per-record cost 2.5 ms")
        assert [r["experiment"] for r in read_summary_csv(path)] == ["1-worker", "2-worker"]
        assert cost_note(summaries) in first

    def test_no_note_without_cost(self, temp_dir):
        """Test runs without an emulated cost write the plain table."""
        path = temp_dir / "summary.csv"
        write_summary_csv([ExperimentSummary(7, 1.0, 0.0, None, "w1")], path)
        assert path.read_text(encoding="utf-8").splitlines()[0] == ",".join(SUMMARY_COLUMNS)
        assert cost_note([ExperimentSummary(7, 1.0, 0.0)]) is None

    def test_events_and_series_files(self, temp_dir):
        """Test event and series exports have headers and one line per item."""
        events = [_recv(0, 2), _proc(500, 2)]
        write_events_csv(events, temp_dir / "events.csv")
        write_series_csv(aggregate_series(events), temp_dir / "series.csv")
        assert (temp_dir / "events.csv").read_text().splitlines() == [
            "kind,ts_ms,count", "Received,0.000,2", "Processed,500.000,2",
        ]
        assert (temp_dir / "series.csv").read_text().splitlines() == ["bin_s,received_cum,processed_cum", "0,2,2"]
