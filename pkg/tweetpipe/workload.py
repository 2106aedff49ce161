"""Tweet corpora and fixed-rate replay into the broker.

Corpus file format (what a collector writes and ``load_corpus`` reads):
UTF-8, one tweet per line, optionally prefixed by a label and a TAB::

    pos<TAB>what a great day
    neg<TAB>stuck in traffic again
    no label on this one

Blank lines are skipped. Tweets longer than 280 characters are rejected.
Live collection from the Twitter API is not built in; anything that writes
this format (``write_corpus`` does) can feed the producer.
"""
from __future__ import annotations

import logging
import math
import threading
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .broker import Broker, BrokerError
from .classifier import LabeledDoc, Sentiment
from .text import default_stopwords

log = logging.getLogger("tweetpipe.workload")

MAX_TWEET_CHARS = 280


class WorkloadError(RuntimeError):
    pass

class EmptyCorpus(WorkloadError):
    pass

class MalformedLine(WorkloadError, ValueError):
    def __init__(self, path: Path | None, lineno: int, reason: str) -> None:
        where = f"{path}:{lineno}" if path is not None else f"line {lineno}"
        super().__init__(f"{where}: {reason}")
        self.lineno = lineno


@dataclass(frozen=True)
class CorpusEntry:
    text: str
    label: Optional[Sentiment] = None


@dataclass(frozen=True)
class TweetCorpus:
    entries: tuple[CorpusEntry, ...]
    source_path: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.entries)

    def texts(self) -> list[str]:
        return [e.text for e in self.entries]

    def labeled(self) -> list[LabeledDoc]:
        """Entries that carry a label, as classifier training documents."""
        return [LabeledDoc(e.text, e.label) for e in self.entries if e.label is not None]


# ----------------------------
# Corpus files
# ----------------------------

def parse_line(line: str, lineno: int, path: Path | None = None) -> CorpusEntry:
    label: Optional[Sentiment] = None
    text = line
    if "\t" in line:
        prefix, text = line.split("\t", 1)
        try:
            label = Sentiment.from_label(prefix)
        except ValueError:
            raise MalformedLine(path, lineno, f"unknown label {prefix!r}") from None
    text = text.strip()
    if not text:
        raise MalformedLine(path, lineno, "empty tweet text")
    if len(text) > MAX_TWEET_CHARS:
        raise MalformedLine(path, lineno, f"tweet is {len(text)} characters (max {MAX_TWEET_CHARS})")
    return CorpusEntry(text, label)


def sample_corpus_path() -> Path:
    """Small labeled corpus shipped with the package."""
    return Path(str(resources.files("tweetpipe").joinpath("data/sample_corpus.tsv")))


def load_corpus(path: Path) -> TweetCorpus:
    raw = path.read_bytes()
    entries: list[CorpusEntry] = []
    for lineno, chunk in enumerate(raw.split(b"\n"), start=1):
        try:
            line = chunk.decode("utf-8").rstrip("\r")
        except UnicodeDecodeError as e:
            raise MalformedLine(path, lineno, f"invalid UTF-8 ({e.reason})") from None
        if not line.strip():
            continue
        entries.append(parse_line(line, lineno, path))
    if not entries:
        raise EmptyCorpus(f"{path}: no tweets")
    log.info("Loaded %d tweets from %s", len(entries), path)
    return TweetCorpus(tuple(entries), path)


def write_corpus(entries: Iterable[CorpusEntry], path: Path) -> int:
    """Write entries in the corpus file format; returns the number written."""
    lines: list[str] = []
    for e in entries:
        text = " ".join(e.text.split())
        lines.append(f"{e.label.label}\t{text}" if e.label is not None else text)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    return len(lines)


# ----------------------------
# Synthetic corpus
# ----------------------------

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z")
_VOWELS = ("a", "e", "i", "o", "u")
OWN_CLASS_PROB = 0.85


def _pseudo_words(n: int) -> list[str]:
    """``n`` distinct pronounceable words, none of them a stopword."""
    stop = default_stopwords()
    syllables = [o + v for o in _ONSETS for v in _VOWELS]
    words: list[str] = []
    i = 0
    while len(words) < n:
        # Three syllables in mixed radix; index order keeps the list stable.
        a, rem = divmod(i, len(syllables) ** 2)
        b, c = divmod(rem, len(syllables))
        w = syllables[a % len(syllables)] + syllables[b] + syllables[c]
        if a >= len(syllables):
            w += str(a // len(syllables))
        if w not in stop:
            words.append(w)
        i += 1
    return words


def generate_synthetic(n: int, vocab_size: int = 400, seed: int = 7) -> TweetCorpus:
    """``n`` labeled pseudo-tweets, alternating pos/neg, deterministic per seed.

    The vocabulary is split in half; a tweet draws each token from its own
    class's half with probability 0.85, so the classes are separable.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if vocab_size < 2:
        raise ValueError(f"vocab_size must be >= 2, got {vocab_size}")
    words = _pseudo_words(vocab_size)
    half = vocab_size // 2
    pools = {Sentiment.POSITIVE: words[:half], Sentiment.NEGATIVE: words[half:]}
    rng = np.random.default_rng(seed)

    entries: list[CorpusEntry] = []
    for i in range(n):
        label = Sentiment.POSITIVE if i % 2 == 0 else Sentiment.NEGATIVE
        other = Sentiment.NEGATIVE if label is Sentiment.POSITIVE else Sentiment.POSITIVE
        length = int(rng.integers(5, 13))
        own = rng.random(length) < OWN_CLASS_PROB
        tokens: list[str] = []
        for is_own in own:
            pool = pools[label] if is_own else pools[other]
            tokens.append(pool[int(rng.integers(0, len(pool)))])
        entries.append(CorpusEntry(" ".join(tokens)[:MAX_TWEET_CHARS].strip(), label))
    return TweetCorpus(tuple(entries))


# ----------------------------
# Replay
# ----------------------------

class ReplayConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    rate: float = Field(..., ge=1.0, le=10_000.0)
    duration_s: float = Field(..., gt=0.0)
    topic: str = "tweets"
    seed: int = 7
    senders: int = Field(2, ge=1, le=32)

    @property
    def budget(self) -> int:
        """Sends due within the window at the target rate."""
        return math.floor(self.rate * self.duration_s + 1e-9)


@dataclass(frozen=True)
class ReplayReport:
    sent: int
    elapsed_s: float
    achieved_rate: float


class ProducerError(WorkloadError):
    def __init__(self, message: str, report: ReplayReport) -> None:
        super().__init__(message)
        self.report = report


class TokenBucket:
    """Thread-safe token bucket.

    Starts with one token; holds at most ten milliseconds' worth so a late
    wake-up is caught up without a burst. Waiters sleep in steps of at most
    one millisecond.
    """

    TICK_S = 0.001
    BURST_S = 0.010

    def __init__(self, rate: float) -> None:
        if rate <= 0:
            raise ValueError(f"rate must be positive, got {rate}")
        self.rate = rate
        self.capacity = max(1.0, rate * self.BURST_S)
        self._tokens = 1.0
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def _refill(self, now: float) -> None:
        self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
        self._last = now

    def try_acquire(self) -> bool:
        with self._lock:
            self._refill(time.monotonic())
            if self._tokens >= 1.0:
                self._tokens -= 1.0
                return True
            return False

    def acquire(self, deadline: float, stop: threading.Event | None = None) -> bool:
        """Block until a token is taken; False once ``deadline`` (monotonic s) passes."""
        while True:
            with self._lock:
                now = time.monotonic()
                self._refill(now)
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return True
                wait = (1.0 - self._tokens) / self.rate
            if now + wait > deadline or (stop is not None and stop.is_set()):
                return False
            time.sleep(min(wait, self.TICK_S))


def replay(corpus: TweetCorpus, config: ReplayConfig, producer: Broker) -> ReplayReport:
    """Send the corpus cyclically into ``config.topic`` at ``config.rate``.

    Sends exactly ``config.budget`` messages unless the window closes first;
    the i-th send carries ``corpus[i mod len]``. Returns when the window
    has elapsed.
    """
    producer.topic(config.topic)  # UnknownTopic before any send
    if not corpus.entries:
        raise EmptyCorpus("cannot replay an empty corpus")

    payloads = [e.text.encode("utf-8") for e in corpus.entries]
    budget = config.budget
    bucket = TokenBucket(config.rate)
    stop = threading.Event()
    seq_lock = threading.Lock()
    state = {"next": 0}
    errors: list[BaseException] = []

    start = time.monotonic()
    deadline = start + config.duration_s

    def sender() -> None:
        while not stop.is_set():
            if not bucket.acquire(deadline, stop):
                return
            with seq_lock:
                i = state["next"]
                if i >= budget:
                    return
                try:
                    # Claim and produce together so broker order is send order.
                    producer.produce(config.topic, None, payloads[i % len(payloads)])
                except (BrokerError, OSError) as e:
                    errors.append(e)
                    stop.set()
                    return
                state["next"] = i + 1

    threads = [
        threading.Thread(target=sender, name=f"tweetpipe-sender-{k}", daemon=True)
        for k in range(config.senders)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    if not errors:
        remaining = deadline - time.monotonic()
        if remaining > 0:
            time.sleep(remaining)
    elapsed = time.monotonic() - start
    sent = state["next"]
    report = ReplayReport(sent=sent, elapsed_s=elapsed, achieved_rate=sent / elapsed if elapsed > 0 else 0.0)
    if errors:
        raise ProducerError(f"replay aborted after {sent} sends: {errors[0]}", report) from errors[0]
    log.info(
        "Replayed %d tweets to %s in %.2fs (%.1f/s, target %.1f/s)",
        report.sent, config.topic, report.elapsed_s, report.achieved_rate, config.rate,
    )
    return report
