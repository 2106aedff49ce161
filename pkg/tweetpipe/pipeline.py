"""End-to-end wiring of broker, stream, classifier and store for one run.

Startup order is store -> broker -> stream -> replay; shutdown is replay
done -> stream drained -> store flushed -> summaries written.
"""
from __future__ import annotations

import dataclasses
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .broker import Broker
from .classifier import EmptyClass, NaiveBayesModel, evaluate, save_model, train
from .config import RunConfig
from .metrics import (
    ExperimentSummary,
    MetricsRecorder,
    Series,
    aggregate_series,
    summarize,
    write_events_csv,
    write_series_csv,
    write_summary_csv,
)
from .store import ColumnFamily, EmptyMemtable, Keyspace, StoreIoError
from .streaming import ClassifyRecord, classification_pipeline, run_streaming
from .workload import ReplayConfig, ReplayReport, TweetCorpus, generate_synthetic, load_corpus, replay

log = logging.getLogger("tweetpipe.pipeline")

SUMMARY_FILE = "summary.csv"
HOLDOUT_EVERY = 5


class ConservationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunResult:
    summary: ExperimentSummary
    replay: ReplayReport
    rows_stored: int
    received_total: int
    processed_total: int
    series: Series
    report_dir: Path


@dataclass(frozen=True)
class TrainResult:
    model: NaiveBayesModel
    accuracy: float
    evaluated_on: str  # "held-out" | "training"
    test_size: int


# ----------------------------
# Helpers
# ----------------------------

def check_writable(directory: Path) -> None:
    """Raise StoreIoError unless ``directory`` can be created and written."""
    marker = directory / ".write-check"
    try:
        directory.mkdir(parents=True, exist_ok=True)
        marker.write_bytes(b"")
        marker.unlink()
    except OSError as e:
        raise StoreIoError(f"{directory} is not writable: {e.strerror or e}") from e


def build_corpus(cfg: RunConfig) -> TweetCorpus:
    if cfg.corpus_path is not None:
        return load_corpus(cfg.corpus_path)
    return generate_synthetic(cfg.synthetic_n, cfg.synthetic_vocab, cfg.seed)


def open_column_family(cfg: RunConfig, root: Path) -> ColumnFamily:
    return Keyspace(root, cfg.keyspace).column_family(
        cfg.column_family,
        memtable_limit=cfg.memtable_limit,
        sync=cfg.commit_sync == "fsync",
    )


def train_from_corpus(corpus: TweetCorpus, alpha: float, model_out: Path | None = None) -> TrainResult:
    """Train on every labeled entry; accuracy comes from a 1-in-5 held-out split."""
    docs = corpus.labeled()
    if not docs:
        raise EmptyClass("corpus has no labeled tweets")
    test = [d for i, d in enumerate(docs) if i % HOLDOUT_EVERY == HOLDOUT_EVERY - 1]
    fit = [d for i, d in enumerate(docs) if i % HOLDOUT_EVERY != HOLDOUT_EVERY - 1]
    try:
        accuracy = evaluate(train(fit, alpha), test)
        evaluated_on = "held-out"
    except EmptyClass:
        # Too small to split with both classes on the training side.
        test = docs
        evaluated_on = "training"
        accuracy = None
    model = train(docs, alpha)
    if accuracy is None:
        accuracy = evaluate(model, test)
    if model_out is not None:
        save_model(model, model_out)
    return TrainResult(model, accuracy, evaluated_on, len(test))


# ----------------------------
# One run
# ----------------------------

def run_pipeline(
    cfg: RunConfig,
    model: NaiveBayesModel,
    corpus: TweetCorpus,
    *,
    experiment: str = "run",
    baseline_processed_time_min: Optional[float] = None,
    report_dir: Path | None = None,
) -> RunResult:
    """Replay ``corpus`` through the pipeline into ``cfg.store_dir`` and export metrics."""
    check_writable(cfg.store_dir)
    reports = report_dir or cfg.reports_path()

    cf = open_column_family(cfg, cfg.store_dir)
    broker: Broker | None = None
    try:
        rows_before = cf.count()
        broker = Broker.open(cfg.store_dir / "broker")
        if not broker.has_topic(cfg.topic):
            broker.create_topic(cfg.topic, cfg.partitions)

        metrics = MetricsRecorder()
        stage = ClassifyRecord(model, record_cost_ms=cfg.record_cost_ms)
        stream = run_streaming(
            broker,
            cfg.topic,
            cfg.batch_interval_ms,
            classification_pipeline(stage),
            cf,
            workers=cfg.workers,
            group_id=cfg.group_id,
            metrics=metrics,
            executor=cfg.executor,
        )
        try:
            report = replay(
                corpus,
                ReplayConfig(rate=cfg.rate, duration_s=cfg.duration_s, topic=cfg.topic, seed=cfg.seed, senders=cfg.senders),
                broker,
            )
        except BaseException:
            try:
                stream.stop()
            except Exception as e:
                log.warning("Stream shutdown after replay failure also failed: %s", e)
            raise
        stream.stop()

        try:
            cf.flush()
        except EmptyMemtable:
            pass
        rows_stored = cf.count() - rows_before
    finally:
        if broker is not None:
            broker.close()
        cf.close()

    events = metrics.events()
    summary = summarize(events, cfg.duration_s / 60.0, baseline_processed_time_min, experiment)
    summary = dataclasses.replace(
        summary,
        latency_percentiles_ms=metrics.latency_percentiles(),
        max_source_lag=metrics.max_source_lag,
        record_cost_ms=cfg.record_cost_ms,
    )
    series = aggregate_series(events, cfg.bin_s)

    if not (rows_stored == report.sent == metrics.processed_total):
        raise ConservationError(
            f"sent {report.sent}, processed {metrics.processed_total}, stored {rows_stored}"
        )

    reports.mkdir(parents=True, exist_ok=True)
    write_events_csv(events, reports / f"events-{experiment}.csv")
    write_series_csv(series, reports / f"series-{experiment}.csv")
    log.info(
        "%s: %d tweets in %.3f min (latency %.3f min, max lag %d)",
        experiment, summary.tweets_processed, summary.processed_time_min,
        summary.latency_min, summary.max_source_lag,
    )
    return RunResult(
        summary=summary,
        replay=report,
        rows_stored=rows_stored,
        received_total=metrics.received_total,
        processed_total=metrics.processed_total,
        series=series,
        report_dir=reports,
    )


def run_once(cfg: RunConfig, model: NaiveBayesModel, corpus: TweetCorpus) -> RunResult:
    result = run_pipeline(cfg, model, corpus)
    write_summary_csv([result.summary], result.report_dir / SUMMARY_FILE)
    return result


# ----------------------------
# Experiments
# ----------------------------

def run_experiment(
    cfg: RunConfig,
    model: NaiveBayesModel,
    corpus: TweetCorpus,
    worker_counts: Sequence[int] = (1, 2, 3),
) -> list[ExperimentSummary]:
    """One run per worker count on fresh state; speedups relative to the first run.

    A failure stops the remaining runs and leaves the summary CSV with an
    ``# incomplete`` marker.
    """
    check_writable(cfg.store_dir)
    reports = cfg.reports_path()
    reports.mkdir(parents=True, exist_ok=True)
    summary_path = reports / SUMMARY_FILE

    summaries: list[ExperimentSummary] = []
    baseline: Optional[float] = None
    for workers in worker_counts:
        run_dir = cfg.store_dir / f"experiment-{workers}"
        if run_dir.exists():
            shutil.rmtree(run_dir)
        run_cfg = cfg.model_copy(update={"workers": workers, "store_dir": run_dir})
        try:
            result = run_pipeline(
                run_cfg, model, corpus,
                experiment=f"{workers}-worker",
                baseline_processed_time_min=baseline,
                report_dir=reports,
            )
        except Exception as e:
            write_summary_csv(summaries, summary_path, incomplete=f"{workers}-worker run failed: {e}")
            raise
        summaries.append(result.summary)
        if baseline is None:
            baseline = result.summary.processed_time_min
        write_summary_csv(summaries, summary_path)
    return summaries