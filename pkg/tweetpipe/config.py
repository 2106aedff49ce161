from __future__ import annotations

from dataclasses import dataclass
import os
from pathlib import Path
from typing import Any, Literal, Mapping, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field

@dataclass(frozen=True)
class Settings:
    # Root for stores, broker logs, models and reports.
    data_dir: Path
    log_level: str

    # Query API bind address
    host: str
    port: int

    # Store / stream defaults
    memtable_limit: int
    batch_interval_ms: int
    commit_sync: str  # "fsync" | "flush"

def load_settings() -> Settings:
    data_dir = Path(os.getenv("TWEETPIPE_DATA_DIR", "./.tweetpipe")).expanduser().resolve()
    sync = os.getenv("TWEETPIPE_COMMIT_SYNC", "fsync").strip().lower()
    if sync not in ("fsync", "flush"):
        sync = "fsync"
    return Settings(
        data_dir=data_dir,
        log_level=os.getenv("TWEETPIPE_LOG_LEVEL", "INFO").upper(),
        host=os.getenv("TWEETPIPE_HOST", "127.0.0.1"),
        port=int(os.getenv("TWEETPIPE_PORT", "8080")),
        memtable_limit=int(os.getenv("TWEETPIPE_MEMTABLE_LIMIT", "10000")),
        batch_interval_ms=int(os.getenv("TWEETPIPE_BATCH_INTERVAL_MS", "1000")),
        commit_sync=sync,
    )


class RunConfig(BaseModel):
    """Everything one pipeline run needs; a config plus a machine fixes the run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    topic: str = "tweets"
    partitions: int = Field(3, ge=1, le=64)
    workers: int = Field(1, ge=1, le=16)
    executor: Literal["thread", "process"] = "thread"
    batch_interval_ms: int = Field(1000, ge=10, le=60_000)
    group_id: str = "tweetpipe-stream"

    rate: float = Field(1000.0, ge=1.0, le=10_000.0)
    duration_s: float = Field(60.0, gt=0.0)
    senders: int = Field(2, ge=1, le=32)

    # Corpus: a file, or a synthetic corpus when corpus_path is unset.
    corpus_path: Optional[Path] = None
    synthetic_n: int = Field(5000, ge=1)
    synthetic_vocab: int = Field(400, ge=2)

    store_dir: Path = Path("./.tweetpipe/store")
    keyspace: str = "analytics"
    column_family: str = "tweets"
    memtable_limit: int = Field(10_000, ge=1)
    commit_sync: Literal["fsync", "flush"] = "fsync"

    model_path: Path = Path("./.tweetpipe/model.json")
    report_dir: Optional[Path] = None
    seed: int = 7

    # Emulated per-record service time; 0 for real runs.
    record_cost_ms: float = Field(0.0, ge=0.0, le=1000.0)
    bin_s: int = Field(10, ge=1)

    def reports_path(self) -> Path:
        return self.report_dir or (self.store_dir / "reports")


# Named override sets for cmd_experiment.
PROFILES: dict[str, dict[str, Any]] = {
    # 1,000 tweets/s for 60 s; one worker serves ~400/s so a backlog forms.
    "desk": {"rate": 1000.0, "duration_s": 60.0, "record_cost_ms": 2.5},
    # 780 tweets/s sustained over a 10-minute window.
    "full": {"rate": 780.0, "duration_s": 600.0, "record_cost_ms": 1.9},
    # Same 2.5x overload of one worker as desk, so 1, 2 and 3 workers finish in that order.
    "smoke": {"rate": 200.0, "duration_s": 3.0, "record_cost_ms": 12.5, "batch_interval_ms": 200},
}


def _normalize_key(k: str) -> str:
    return k.strip().lower().replace("-", "_")


def read_config_file(path: Path) -> dict[str, Any]:
    """Parse a `key=value` run-config file."""
    values = dotenv_values(path)
    return {_normalize_key(k): v for k, v in values.items() if v is not None and v != ""}


def load_run_config(
    config_file: Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    settings: Settings | None = None,
) -> RunConfig:
    """defaults <- environment <- config file <- flags (flags win)."""
    s = settings or load_settings()
    merged: dict[str, Any] = {
        "batch_interval_ms": s.batch_interval_ms,
        "memtable_limit": s.memtable_limit,
        "commit_sync": s.commit_sync,
        "store_dir": s.data_dir / "store",
        "model_path": s.data_dir / "model.json",
    }
    if config_file is not None:
        merged.update(read_config_file(config_file))
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**merged)
