import pytest
import tempfile
from pathlib import Path
import sys

# Add the project root to the Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

from tweetpipe.classifier import LabeledDoc, Sentiment, train
from tweetpipe.workload import load_corpus, sample_corpus_path


class SimulatedCrash(Exception):
    """Raised by a failpoint to emulate the process dying at that point."""


@pytest.fixture
def temp_dir():
    """Create a temporary directory for testing."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def tiny_docs():
    """Hand-countable labeled documents."""
    return [
        LabeledDoc("good great good", Sentiment.POSITIVE),
        LabeledDoc("great fun", Sentiment.POSITIVE),
        LabeledDoc("bad awful", Sentiment.NEGATIVE),
    ]


@pytest.fixture
def sample_docs():
    """The labeled sample corpus shipped with the package."""
    return load_corpus(sample_corpus_path()).labeled()


@pytest.fixture
def toy_model(sample_docs):
    """A model trained on the shipped sample corpus."""
    return train(sample_docs, alpha=1.0)


@pytest.fixture
def crash_at():
    """Factory for a failpoint that raises SimulatedCrash on its n-th call (1-based)."""

    def make(n, points=None):
        calls = {"n": 0, "hit": None}

        def hook(point):
            if points is not None and point not in points:
                return
            calls["n"] += 1
            if calls["n"] == n:
                calls["hit"] = point
                raise SimulatedCrash(point)

        hook.calls = calls
        return hook

    return make
