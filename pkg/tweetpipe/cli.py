"""tweetpipe command line.

Exit codes: 0 success, 1 usage error, 2 runtime error. Runtime errors print
one line ``error [<component>]: <message>`` on stderr.
"""
from __future__ import annotations

import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator, Optional

import click
import typer
from pydantic import ValidationError
from typer.core import TyperGroup

from .broker import Broker
from .classifier import load_model
from .config import PROFILES, RunConfig, load_run_config, load_settings
from .metrics import ExperimentSummary, cost_note
from .pipeline import build_corpus, run_experiment, run_once, train_from_corpus
from .query import KeywordQuery, StoreUnavailable
from .server import serve
from .store import StoreError, StoreView
from .workload import (
    ReplayConfig,
    generate_synthetic,
    load_corpus,
    replay,
    sample_corpus_path,
    write_corpus,
)

log = logging.getLogger("tweetpipe.cli")

EXIT_USAGE = 1
EXIT_RUNTIME = 2

# Module of an exception's class -> reported component.
_COMPONENTS = {
    "broker": "broker",
    "workers": "stream",
    "dataset": "stream",
    "streaming": "stream",
    "classifier": "classifier",
    "text": "classifier",
    "store": "store",
    "sstable": "store",
    "commitlog": "store",
    "rows": "store",
    "bloom": "store",
    "workload": "workload",
    "metrics": "metrics",
    "query": "query-api",
    "server": "query-api",
    "pipeline": "pipeline",
    "config": "config",
    "security": "config",
}


def component_of(exc: BaseException, default: str) -> str:
    mod = type(exc).__module__
    if mod.startswith("tweetpipe."):
        return _COMPONENTS.get(mod.split(".")[1], default)
    return default


class _Group(TyperGroup):
    """Maps click usage errors to exit code 1."""

    def main(self, *args: Any, **kwargs: Any) -> Any:
        kwargs["standalone_mode"] = False
        try:
            rv = super().main(*args, **kwargs)
        except click.UsageError as e:
            e.show()
            sys.exit(EXIT_USAGE)
        except click.ClickException as e:
            e.show()
            sys.exit(e.exit_code)
        except click.Abort:
            typer.echo("Aborted!", err=True)
            sys.exit(EXIT_USAGE)
        sys.exit(rv if isinstance(rv, int) else 0)


app = typer.Typer(
    cls=_Group,
    help="Real-time tweet sentiment pipeline: broker, micro-batch stream, LSM store.",
    no_args_is_help=True,
    add_completion=False,
)


@contextmanager
def runtime_errors(component: str) -> Iterator[None]:
    try:
        yield
    except (typer.Exit, click.ClickException, click.Abort):
        raise
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ())) or "config"
        typer.echo(f"error [config]: {where}: {first.get('msg')}", err=True)
        raise typer.Exit(EXIT_USAGE)
    except KeyboardInterrupt:
        typer.echo(f"error [{component}]: interrupted", err=True)
        raise typer.Exit(EXIT_RUNTIME)
    except Exception as e:
        log.debug("Command failed", exc_info=True)
        msg = " ".join(str(e).split()) or type(e).__name__
        typer.echo(f"error [{component_of(e, component)}]: {msg}", err=True)
        raise typer.Exit(EXIT_RUNTIME)


@app.callback()
def main_callback(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Logging level (default TWEETPIPE_LOG_LEVEL or INFO)."),
) -> None:
    level = (log_level or load_settings().log_level).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(asctime)s %(levelname)s %(name)s: %(message)s")


# ----------------------------
# train / generate
# ----------------------------

@app.command()
def train(
    corpus: Optional[Path] = typer.Option(None, "--corpus", help="Labeled corpus file (default: shipped sample corpus)."),
    alpha: float = typer.Option(1.0, "--alpha", help="Additive smoothing constant, > 0."),
    model_out: Optional[Path] = typer.Option(None, "--model-out", help="Model file to write (default <data_dir>/model.json)."),
) -> None:
    """Train the Naive Bayes sentiment model and print its accuracy."""
    if not alpha > 0:
        raise typer.BadParameter(f"must be > 0, got {alpha}", param_hint="--alpha")
    out = model_out or load_settings().data_dir / "model.json"
    with runtime_errors("classifier"):
        result = train_from_corpus(load_corpus(corpus or sample_corpus_path()), alpha, out)
        typer.echo(
            f"accuracy={result.accuracy:.4f} ({result.evaluated_on}, n={result.test_size}) "
            f"vocabulary={len(result.model.vocabulary)} model={out}"
        )


@app.command()
def generate(
    out: Path = typer.Option(..., "--out", help="Corpus file to write."),
    n: int = typer.Option(5000, "--n", min=1, help="Number of tweets."),
    vocab: int = typer.Option(400, "--vocab", min=2, help="Vocabulary size."),
    seed: int = typer.Option(7, "--seed", help="Random seed."),
) -> None:
    """Write a synthetic labeled corpus (half pos, half neg)."""
    with runtime_errors("workload"):
        written = write_corpus(generate_synthetic(n, vocab, seed).entries, out)
        typer.echo(f"wrote {written} tweets to {out}")


# ----------------------------
# replay
# ----------------------------

@app.command("replay")
def replay_cmd(
    rate: float = typer.Option(..., "--rate", help="Tweets per second, 1-10000."),
    duration: float = typer.Option(..., "--duration", help="Replay window in seconds."),
    topic: str = typer.Option("tweets", "--topic"),
    seed: int = typer.Option(7, "--seed"),
    senders: int = typer.Option(2, "--senders", min=1, max=32, help="Parallel sender threads."),
    partitions: int = typer.Option(3, "--partitions", min=1, max=64, help="Partitions when the topic is created."),
    corpus: Optional[Path] = typer.Option(None, "--corpus", help="Corpus file (default: synthetic)."),
    broker_dir: Optional[Path] = typer.Option(None, "--broker-dir", help="Broker data directory (default <data_dir>/broker)."),
    create_topic: bool = typer.Option(True, "--create-topic/--no-create-topic"),
) -> None:
    """Replay a corpus into a broker topic at a fixed rate."""
    with runtime_errors("workload"):
        cfg = ReplayConfig(rate=rate, duration_s=duration, topic=topic, seed=seed, senders=senders)
        tweets = load_corpus(corpus) if corpus else generate_synthetic(5000, 400, seed)
        broker = Broker.open(broker_dir or load_settings().data_dir / "broker")
        try:
            if create_topic and not broker.has_topic(topic):
                broker.create_topic(topic, partitions)
            before = sum(broker.end_offsets(topic)) if broker.has_topic(topic) else 0
            report = replay(tweets, cfg, broker)
            delta = sum(broker.end_offsets(topic)) - before
        finally:
            broker.close()
        typer.echo(
            f"sent={report.sent} elapsed_s={report.elapsed_s:.3f} "
            f"achieved_rate={report.achieved_rate:.1f} broker_delta={delta}"
        )


# ----------------------------
# run / experiment
# ----------------------------

def _print_summaries(summaries: list[ExperimentSummary]) -> None:
    typer.echo(f"{'experiment':<12} {'tweets':>9} {'time_m':>8} {'latency_m':>10} {'speedup_%':>10}")
    for s in summaries:
        sp = "-" if s.speedup_pct is None else f"{s.speedup_pct:.1f}"
        typer.echo(f"{s.experiment:<12} {s.tweets_processed:>9} {s.processed_time_min:>8.3f} {s.latency_min:>10.3f} {sp:>10}")
        if s.latency_percentiles_ms:
            pct = " ".join(f"{k}={v:.1f}ms" for k, v in s.latency_percentiles_ms.items())
            typer.echo(f"{'':<12} per-message latency {pct}, max source lag {s.max_source_lag}")
    note = cost_note(summaries)
    if note is not None:
        typer.echo(f"note: {note}")


def _load_config(config_file: Optional[Path], overrides: dict[str, Any]) -> RunConfig:
    try:
        return load_run_config(config_file, overrides)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ()))
        raise typer.BadParameter(f"{where}: {first.get('msg')}") from None


@app.command()
def run(
    config: Optional[Path] = typer.Option(None, "--config", exists=True, dir_okay=False, help="key=value run-config file; flags win."),
    topic: Optional[str] = typer.Option(None, "--topic"),
    partitions: Optional[int] = typer.Option(None, "--partitions", help="1-64."),
    workers: Optional[int] = typer.Option(None, "--workers", help="Stream workers, 1-16."),
    executor: Optional[str] = typer.Option(None, "--executor", help="thread | process."),
    batch_interval_ms: Optional[int] = typer.Option(None, "--batch-interval-ms", help="Micro-batch interval, 10-60000."),
    rate: Optional[float] = typer.Option(None, "--rate", help="Tweets per second, 1-10000."),
    duration: Optional[float] = typer.Option(None, "--duration", help="Replay window in seconds."),
    senders: Optional[int] = typer.Option(None, "--senders"),
    corpus: Optional[Path] = typer.Option(None, "--corpus", help="Corpus file (default: synthetic)."),
    synthetic_n: Optional[int] = typer.Option(None, "--synthetic-n"),
    store_dir: Optional[Path] = typer.Option(None, "--store-dir"),
    model: Optional[Path] = typer.Option(None, "--model", help="Trained model file."),
    report_dir: Optional[Path] = typer.Option(None, "--report-dir"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    record_cost_ms: Optional[float] = typer.Option(None, "--record-cost-ms", help="Emulated per-record service time."),
    bin_s: Optional[int] = typer.Option(None, "--bin-s", help="Series bin width in seconds."),
    commit_sync: Optional[str] = typer.Option(None, "--commit-sync", help="fsync | flush."),
) -> None:
    """Run the pipeline end to end once and export its metrics."""
    cfg = _load_config(config, {
        "topic": topic, "partitions": partitions, "workers": workers, "executor": executor,
        "batch_interval_ms": batch_interval_ms, "rate": rate, "duration_s": duration,
        "senders": senders, "corpus_path": corpus, "synthetic_n": synthetic_n,
        "store_dir": store_dir, "model_path": model, "report_dir": report_dir, "seed": seed,
        "record_cost_ms": record_cost_ms, "bin_s": bin_s, "commit_sync": commit_sync,
    })
    with runtime_errors("classifier"):
        nb = load_model(cfg.model_path)
    with runtime_errors("workload"):
        tweets = build_corpus(cfg)
    with runtime_errors("pipeline"):
        result = run_once(cfg, nb, tweets)
        _print_summaries([result.summary])
        typer.echo(
            f"sent={result.replay.sent} received={result.received_total} "
            f"processed={result.processed_total} stored={result.rows_stored} reports={result.report_dir}"
        )


@app.command()
def experiment(
    profile: str = typer.Option("desk", "--profile", help=f"One of: {', '.join(PROFILES)}."),
    config: Optional[Path] = typer.Option(None, "--config", exists=True, dir_okay=False),
    workers: str = typer.Option("1,2,3", "--workers", help="Comma-separated worker counts; the first is the baseline."),
    corpus: Optional[Path] = typer.Option(None, "--corpus"),
    store_dir: Optional[Path] = typer.Option(None, "--store-dir"),
    model: Optional[Path] = typer.Option(None, "--model"),
    report_dir: Optional[Path] = typer.Option(None, "--report-dir"),
    seed: Optional[int] = typer.Option(None, "--seed"),
) -> None:
    """Run the scaling experiment: one run per worker count, with speedups."""
    if profile not in PROFILES:
        raise typer.BadParameter(f"unknown profile {profile!r}", param_hint="--profile")
    try:
        counts = [int(w) for w in workers.split(",") if w.strip()]
    except ValueError:
        raise typer.BadParameter(f"not a list of integers: {workers!r}", param_hint="--workers") from None
    if not counts or any(not 1 <= c <= 16 for c in counts):
        raise typer.BadParameter("worker counts must be within 1-16", param_hint="--workers")
    cfg = _load_config(config, {
        **PROFILES[profile],
        "corpus_path": corpus, "store_dir": store_dir, "model_path": model,
        "report_dir": report_dir, "seed": seed,
    })
    with runtime_errors("classifier"):
        nb = load_model(cfg.model_path)
    with runtime_errors("workload"):
        tweets = build_corpus(cfg)
    with runtime_errors("pipeline"):
        summaries = run_experiment(cfg, nb, tweets, counts)
        _print_summaries(summaries)
        typer.echo(f"reports={cfg.reports_path()}")


# ----------------------------
# serve
# ----------------------------

@app.command("serve")
def serve_cmd(
    store_dir: Optional[Path] = typer.Option(None, "--store-dir", help="Store directory of a run."),
    keyspace: str = typer.Option("analytics", "--keyspace"),
    column_family: str = typer.Option("tweets", "--column-family"),
    host: Optional[str] = typer.Option(None, "--host"),
    port: Optional[int] = typer.Option(None, "--port", min=1, max=65535),
) -> None:
    """Serve the keyword query API over HTTP until interrupted.

    The store is opened read-only, so this can run next to a live `run`.
    """
    settings = load_settings()
    root = store_dir or settings.data_dir / "store"
    with runtime_errors("query-api"):
        cf_path = root / keyspace / column_family
        if not cf_path.is_dir():
            raise StoreUnavailable(f"no column family at {cf_path}")
        try:
            view = StoreView.open(cf_path)
        except StoreError as e:
            raise StoreUnavailable(str(e)) from e
        try:
            serve(KeywordQuery(view), host or settings.host, port or settings.port)
        finally:
            view.close()
