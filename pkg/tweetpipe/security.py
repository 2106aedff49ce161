from __future__ import annotations

import re
from pathlib import Path

class PathAccessError(ValueError):
    pass

_COMPONENT = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")

def safe_component(name: str, what: str = "name") -> str:
    """Validate a topic/keyspace/column-family name used as a directory name."""
    if not name or not _COMPONENT.match(name) or name in (".", ".."):
        raise PathAccessError(f"{what} must be a non-empty [A-Za-z0-9._-] string: {name!r}")
    return name

def child_dir(base: Path, *names: str) -> Path:
    # Block traversal out of the data root.
    p = base.joinpath(*names).resolve()
    try:
        p.relative_to(base.resolve())
    except ValueError as e:
        raise PathAccessError(f"path escapes data root: {p}") from e
    return p
