from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from .classifier import Sentiment
from .rows import Row
from .store import ColumnFamily, StoreError, StoreView
from .text import TokenPipeline

log = logging.getLogger("tweetpipe.query")

DEFAULT_WINDOW = 200
DEFAULT_LIMIT = 10


class StoreUnavailable(RuntimeError):
    pass

class EmptyKeyword(ValueError):
    pass


@dataclass(frozen=True)
class KeywordCount:
    keyword: str
    positive_count: int
    negative_count: int

    def count(self, sentiment: Sentiment) -> int:
        return self.positive_count if sentiment is Sentiment.POSITIVE else self.negative_count


@dataclass(frozen=True)
class TopKeywords:
    positive: list[KeywordCount]
    negative: list[KeywordCount]

    def to_dict(self) -> dict[str, list[dict[str, object]]]:
        return {
            "positive": [{"keyword": k.keyword, "count": k.positive_count} for k in self.positive],
            "negative": [{"keyword": k.keyword, "count": k.negative_count} for k in self.negative],
        }


@dataclass
class KeywordQuery:
    """Keyword statistics over the newest rows of a column family.

    Counts are token occurrences after preprocessing: a word used twice in
    one tweet counts twice. Every call re-reads the store.
    """

    store: Optional[ColumnFamily | StoreView]
    pipeline: TokenPipeline = field(default_factory=TokenPipeline)

    # ----------------------------
    # Window
    # ----------------------------

    def _window(self, window: int) -> list[Row]:
        if window < 1:
            raise ValueError(f"window must be positive, got {window}")
        if self.store is None or self.store.closed:
            raise StoreUnavailable("store is not open")
        try:
            return self.store.scan_latest(window)
        except StoreError as e:
            raise StoreUnavailable(str(e)) from e

    def _counts(self, window: int) -> dict[Sentiment, Counter[str]]:
        counts: dict[Sentiment, Counter[str]] = {s: Counter() for s in Sentiment}
        for row in self._window(window):
            counts[row.sentiment].update(self.pipeline.tokenize(row.tweet_text))
        return counts

    # ----------------------------
    # Queries
    # ----------------------------

    def top_keywords(self, window: int = DEFAULT_WINDOW, limit: Optional[int] = DEFAULT_LIMIT) -> TopKeywords:
        """Most frequent tokens per sentiment; ties break alphabetically. ``limit=None`` lists all."""
        if limit is not None and limit < 1:
            raise ValueError(f"limit must be positive, got {limit}")
        counts = self._counts(window)
        pos, neg = counts[Sentiment.POSITIVE], counts[Sentiment.NEGATIVE]

        def ranked(c: Counter[str]) -> list[KeywordCount]:
            order = sorted(c.items(), key=lambda kv: (-kv[1], kv[0]))
            if limit is not None:
                order = order[:limit]
            return [KeywordCount(k, pos.get(k, 0), neg.get(k, 0)) for k, _ in order]

        return TopKeywords(positive=ranked(pos), negative=ranked(neg))

    def search_keyword(self, keyword: str, window: int = DEFAULT_WINDOW) -> KeywordCount:
        kw = (keyword or "").strip().lower()
        if not kw:
            raise EmptyKeyword("keyword must be non-empty")
        counts = self._counts(window)
        return KeywordCount(kw, counts[Sentiment.POSITIVE].get(kw, 0), counts[Sentiment.NEGATIVE].get(kw, 0))
