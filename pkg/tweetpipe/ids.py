from __future__ import annotations

import uuid

def make_row_id(topic: str, partition: int, offset: int) -> str:
    # One id per broker record, so re-processing a record overwrites its row.
    key = f"{topic}|{partition}|{offset}"
    return str(uuid.uuid5(uuid.NAMESPACE_URL, key))
