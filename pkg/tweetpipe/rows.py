"""Row type and its binary encoding, shared by SSTables and the commit log.

    [u32 id_len][id utf-8][u32 text_len][tweet_text utf-8][u8 sentiment 0=neg,1=pos][u64 processed_at ms]

All integers little-endian.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

from .classifier import Sentiment

_U32 = struct.Struct("<I")
_TAIL = struct.Struct("<BQ")


class TruncatedRecord(ValueError):
    pass


@dataclass(frozen=True)
class Row:
    id: str
    tweet_text: str
    sentiment: Sentiment
    processed_at: int  # epoch ms

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("row id must be non-empty")
        if not isinstance(self.sentiment, Sentiment):
            raise ValueError(f"sentiment must be a Sentiment, got {self.sentiment!r}")


def encode_row(row: Row) -> bytes:
    rid = row.id.encode("utf-8")
    text = row.tweet_text.encode("utf-8")
    return b"".join((
        _U32.pack(len(rid)), rid,
        _U32.pack(len(text)), text,
        _TAIL.pack(row.sentiment.value, row.processed_at),
    ))


def decode_row(buf: bytes | memoryview, pos: int = 0) -> tuple[Row, int]:
    """Decode one row at ``pos``; returns (row, end). Raises TruncatedRecord at a short buffer."""
    n = len(buf)
    if pos + 4 > n:
        raise TruncatedRecord(pos)
    (id_len,) = _U32.unpack_from(buf, pos)
    pos += 4
    if pos + id_len + 4 > n:
        raise TruncatedRecord(pos)
    rid = bytes(buf[pos:pos + id_len]).decode("utf-8")
    pos += id_len
    (text_len,) = _U32.unpack_from(buf, pos)
    pos += 4
    if pos + text_len + _TAIL.size > n:
        raise TruncatedRecord(pos)
    text = bytes(buf[pos:pos + text_len]).decode("utf-8")
    pos += text_len
    sent, ts = _TAIL.unpack_from(buf, pos)
    pos += _TAIL.size
    if sent not in (0, 1):
        raise ValueError(f"bad sentiment byte {sent}")
    return Row(rid, text, Sentiment(sent), ts), pos
