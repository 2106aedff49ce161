"""Tweet preprocessing.

Rules, applied per whitespace-separated token:

1. lowercase;
2. drop URLs: tokens starting with ``http://``, ``https://`` or ``www.``;
3. strip leading/trailing punctuation (anything that is not a letter or digit);
   drop the token if nothing is left;
4. drop numbers, dates and times: digits with optional ``: / - . ,`` separators;
5. drop stopwords.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import FrozenSet, Iterable

URL_PREFIXES = ("http://", "https://", "www.")
NUMBER_PATTERN = re.compile(r"^[0-9][0-9:/\-.,]*$")
_EDGE_PUNCT = re.compile(r"^[\W_]+|[\W_]+$")


@lru_cache(maxsize=1)
def default_stopwords() -> FrozenSet[str]:
    raw = resources.files("tweetpipe").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(
        w.strip().lower() for w in raw.splitlines() if w.strip() and not w.startswith("#")
    )


@dataclass(frozen=True)
class TokenPipeline:
    stopwords: FrozenSet[str] = field(default_factory=default_stopwords)
    url_prefixes: tuple[str, ...] = URL_PREFIXES
    number_pattern: re.Pattern[str] = NUMBER_PATTERN

    @classmethod
    def with_stopwords(cls, words: Iterable[str]) -> "TokenPipeline":
        return cls(stopwords=frozenset(w.lower() for w in words))

    def is_url(self, token: str) -> bool:
        return token.startswith(self.url_prefixes)

    def tokenize(self, text: str) -> list[str]:
        out: list[str] = []
        for raw in text.split():
            tok = raw.lower()
            if self.is_url(tok):
                continue
            tok = _EDGE_PUNCT.sub("", tok)
            if not tok:
                continue
            if self.number_pattern.match(tok):
                continue
            if tok in self.stopwords:
                continue
            out.append(tok)
        return out


def preprocess(text: str, pipeline: TokenPipeline | None = None) -> list[str]:
    return (pipeline or TokenPipeline()).tokenize(text)
