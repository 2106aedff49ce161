import os
from pathlib import Path
from unittest.mock import patch

import pytest
from pydantic import ValidationError

from tweetpipe.config import PROFILES, RunConfig, Settings, load_run_config, load_settings, read_config_file


def _settings(tmp):
    return Settings(
        data_dir=tmp,
        log_level="INFO",
        host="127.0.0.1",
        port=8080,
        memtable_limit=500,
        batch_interval_ms=250,
        commit_sync="flush",
    )


class TestSettings:
    """Environment settings."""

    def test_defaults(self):
        """Test loading settings with an empty environment."""
        with patch.dict(os.environ, {}, clear=True):
            s = load_settings()
        assert s.data_dir == Path("./.tweetpipe").resolve()
        assert s.log_level == "INFO"
        assert (s.host, s.port) == ("127.0.0.1", 8080)
        assert s.memtable_limit == 10_000
        assert s.batch_interval_ms == 1000
        assert s.commit_sync == "fsync"

    def test_custom_env(self, temp_dir):
        """Test loading settings from custom environment variables."""
        env = {
            "TWEETPIPE_DATA_DIR": str(temp_dir),
            "TWEETPIPE_LOG_LEVEL": "debug",
            "TWEETPIPE_HOST": "0.0.0.0",
            "TWEETPIPE_PORT": "9000",
            "TWEETPIPE_MEMTABLE_LIMIT": "50",
            "TWEETPIPE_BATCH_INTERVAL_MS": "200",
            "TWEETPIPE_COMMIT_SYNC": "FLUSH",
        }
        with patch.dict(os.environ, env, clear=True):
            s = load_settings()
        assert s.data_dir == temp_dir.resolve()
        assert s.log_level == "DEBUG"
        assert (s.host, s.port) == ("0.0.0.0", 9000)
        assert (s.memtable_limit, s.batch_interval_ms, s.commit_sync) == (50, 200, "flush")

    def test_unknown_sync_mode_falls_back(self):
        """Test an unknown commit sync mode falls back to fsync."""
        with patch.dict(os.environ, {"TWEETPIPE_COMMIT_SYNC": "sometimes"}, clear=True):
            assert load_settings().commit_sync == "fsync"

    def test_settings_frozen(self, temp_dir):
        """Test settings are immutable."""
        s = _settings(temp_dir)
        with pytest.raises(AttributeError):
            s.port = 1


class TestRunConfig:
    """Run configuration layering and validation."""

    def test_settings_feed_defaults(self, temp_dir):
        """Test environment settings seed the store, model and stream defaults."""
        cfg = load_run_config(settings=_settings(temp_dir))
        assert cfg.store_dir == temp_dir / "store"
        assert cfg.model_path == temp_dir / "model.json"
        assert (cfg.memtable_limit, cfg.batch_interval_ms, cfg.commit_sync) == (500, 250, "flush")
        assert cfg.reports_path() == temp_dir / "store" / "reports"

    def test_file_then_flags(self, temp_dir):
        """Test the config file overrides settings and flags override the file."""
        path = temp_dir / "run.env"
        path.write_text("rate=500\nWORKERS=2\nduration-s=30\n# comment\ntopic=\n", encoding="utf-8")
        cfg = load_run_config(path, {"workers": 3, "seed": None}, settings=_settings(temp_dir))
        assert cfg.rate == 500.0
        assert cfg.duration_s == 30.0
        assert cfg.workers == 3
        assert cfg.topic == "tweets"
        assert cfg.seed == 7

    def test_read_config_file(self, temp_dir):
        """Test keys are normalized and empty values dropped."""
        path = temp_dir / "run.env"
        path.write_text("Batch-Interval-MS=100\nreport_dir=\n", encoding="utf-8")
        assert read_config_file(path) == {"batch_interval_ms": "100"}

    def test_unknown_key(self, temp_dir):
        """Test an unknown key is rejected."""
        path = temp_dir / "run.env"
        path.write_text("ratee=5\n", encoding="utf-8")
        with pytest.raises(ValidationError):
            load_run_config(path, settings=_settings(temp_dir))

    @pytest.mark.parametrize("field,value", [
        ("workers", 0), ("partitions", 0), ("rate", 0.5), ("rate", 20_000),
        ("duration_s", 0), ("executor", "gpu"), ("batch_interval_ms", 1), ("commit_sync", "never"),
    ])
    def test_out_of_range(self, field, value):
        """Test invalid values are rejected."""
        with pytest.raises(ValidationError):
            RunConfig(**{field: value})

    def test_frozen(self):
        """Test run configs are immutable."""
        with pytest.raises(ValidationError):
            RunConfig().workers = 2

    def test_report_dir_override(self, temp_dir):
        """Test an explicit report dir wins."""
        assert RunConfig(report_dir=temp_dir).reports_path() == temp_dir

    @pytest.mark.parametrize("name", sorted(PROFILES))
    def test_profiles_valid(self, name, temp_dir):
        """Test every profile is a valid override set."""
        cfg = load_run_config(overrides=PROFILES[name], settings=_settings(temp_dir))
        assert cfg.rate == PROFILES[name]["rate"]

    def test_desk_profile_overloads_one_worker(self):
        """Test one desk worker cannot keep up with the desk rate."""
        p = PROFILES["desk"]
        assert 1000.0 / p["record_cost_ms"] < p["rate"]
