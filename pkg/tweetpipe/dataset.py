"""Immutable partitioned datasets with lazy transformations.

``map``/``filter``/``group_by_key`` only extend the lineage; ``count``,
``reduce``, ``take`` and ``collect`` evaluate it on a ``WorkerGroup``, one
task per partition. Consecutive narrow steps are fused into one task;
``group_by_key`` is a hash shuffle (map-side split, reduce-side grouping).
"""
from __future__ import annotations

import functools
import threading
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Optional, Sequence

from .broker import InvalidPartitionCount
from .hashing import stable_key_hash
from .workers import StreamError, TaskError, WorkerGroup

__all__ = [
    "Dataset",
    "Transformation",
    "EmptyDataset",
    "TaskError",
    "InvalidPartitionCount",
    "from_records",
]

Partitions = tuple[tuple[Any, ...], ...]


class EmptyDataset(StreamError):
    pass


@dataclass(frozen=True)
class Transformation:
    kind: str  # map | filter | group_by_key
    function: Optional[Callable[..., Any]] = None


# Task bodies are module-level so process workers can unpickle them.

def _run_narrow(partition: tuple[Any, ...], steps: tuple[Transformation, ...]) -> tuple[Any, ...]:
    out: Iterable[Any] = partition
    for step in steps:
        if step.kind == "map":
            out = [step.function(x) for x in out]  # type: ignore[misc]
        else:
            out = [x for x in out if step.function(x)]  # type: ignore[misc]
    return tuple(out)


def _hash_split(partition: tuple[Any, ...], n: int) -> list[list[tuple[Any, Any]]]:
    buckets: list[list[tuple[Any, Any]]] = [[] for _ in range(n)]
    for item in partition:
        k, v = item
        buckets[stable_key_hash(k) % n].append((k, v))
    return buckets


def _group_pairs(pairs: list[tuple[Any, Any]]) -> tuple[Any, ...]:
    grouped: dict[Any, list[Any]] = {}
    for k, v in pairs:
        grouped.setdefault(k, []).append(v)
    return tuple(grouped.items())


def _fold(partition: tuple[Any, ...], op: Callable[[Any, Any], Any]) -> tuple[bool, Any]:
    if not partition:
        return False, None
    return True, functools.reduce(op, partition)


_default_lock = threading.Lock()
_default_group: WorkerGroup | None = None


def default_group() -> WorkerGroup:
    global _default_group
    with _default_lock:
        if _default_group is None:
            _default_group = WorkerGroup(1)
        return _default_group


class Dataset:
    def __init__(
        self,
        workers: WorkerGroup,
        num_partitions: int,
        *,
        source: Partitions | None = None,
        parent: "Dataset | None" = None,
        transformation: Transformation | None = None,
        cached: bool = False,
    ) -> None:
        self._workers = workers
        self._num_partitions = num_partitions
        self._source = source
        self._parent = parent
        self._transformation = transformation
        self._cached = cached
        self._cache: Partitions | None = None
        self._lock = threading.Lock()
        self._materializations = 0

    # ----------------------------
    # Introspection
    # ----------------------------

    @property
    def num_partitions(self) -> int:
        return self._num_partitions

    @property
    def cached(self) -> bool:
        return self._cached

    @property
    def materializations(self) -> int:
        """How many times this dataset's partitions were computed (not served from cache)."""
        with self._lock:
            return self._materializations

    @property
    def lineage(self) -> list[Transformation]:
        steps: list[Transformation] = []
        node: Dataset | None = self
        while node is not None and node._transformation is not None:
            steps.append(node._transformation)
            node = node._parent
        steps.reverse()
        return steps

    # ----------------------------
    # Transformations (lazy)
    # ----------------------------

    def _derive(self, t: Transformation) -> "Dataset":
        return Dataset(self._workers, self._num_partitions, parent=self, transformation=t)

    def map(self, f: Callable[[Any], Any]) -> "Dataset":
        return self._derive(Transformation("map", f))

    def filter(self, p: Callable[[Any], bool]) -> "Dataset":
        return self._derive(Transformation("filter", p))

    def group_by_key(self) -> "Dataset":
        return self._derive(Transformation("group_by_key"))

    def cache(self) -> "Dataset":
        if self._cached:
            return self
        return Dataset(
            self._workers,
            self._num_partitions,
            source=self._source,
            parent=self._parent,
            transformation=self._transformation,
            cached=True,
        )

    # ----------------------------
    # Evaluation
    # ----------------------------

    def _is_barrier(self) -> bool:
        return (
            self._transformation is None
            or self._transformation.kind == "group_by_key"
            or self._cached
        )

    def _partitions(self) -> Partitions:
        if self._cached:
            with self._lock:
                if self._cache is not None:
                    return self._cache
        result = self._compute()
        with self._lock:
            self._materializations += 1
            if self._cached and self._cache is None:
                self._cache = result
        return result

    def _compute(self) -> Partitions:
        if self._transformation is None:
            assert self._source is not None
            return self._source

        if self._transformation.kind == "group_by_key":
            assert self._parent is not None
            upstream = self._parent._partitions()
            n = self._num_partitions
            splits = self._workers.run_tasks(_hash_split, [(p, n) for p in upstream])
            merged = [[pair for split in splits for pair in split[i]] for i in range(n)]
            return tuple(self._workers.run_tasks(_group_pairs, [(m,) for m in merged]))

        # Fuse narrow steps back to the nearest barrier.
        steps: list[Transformation] = [self._transformation]
        node = self._parent
        assert node is not None
        while not node._is_barrier():
            assert node._transformation is not None and node._parent is not None
            steps.append(node._transformation)
            node = node._parent
        steps.reverse()
        upstream = node._partitions()
        fused = tuple(steps)
        return tuple(self._workers.run_tasks(_run_narrow, [(p, fused) for p in upstream]))

    # ----------------------------
    # Actions (eager)
    # ----------------------------

    def partitions(self) -> list[list[Any]]:
        return [list(p) for p in self._partitions()]

    def collect(self) -> list[Any]:
        return [x for p in self._partitions() for x in p]

    def count(self) -> int:
        return sum(len(p) for p in self._partitions())

    def reduce(self, op: Callable[[Any, Any], Any]) -> Any:
        """Fold all elements with ``op``.

        ``op`` must be associative and commutative: partitions are folded in
        parallel and their partial results combined in no particular order.
        """
        parts = self._partitions()
        partials = [v for ok, v in self._workers.run_tasks(_fold, [(p, op) for p in parts]) if ok]
        if not partials:
            raise EmptyDataset("reduce of an empty dataset")
        return functools.reduce(op, partials)

    def take(self, n: int) -> list[Any]:
        out: list[Any] = []
        if n <= 0:
            return out
        for p in self._partitions():
            for x in p:
                out.append(x)
                if len(out) == n:
                    return out
        return out

    def __repr__(self) -> str:
        kinds = ",".join(t.kind for t in self.lineage) or "source"
        return f"Dataset(partitions={self._num_partitions}, lineage=[{kinds}], cached={self._cached})"


def from_records(
    records: Sequence[Any],
    partition_count: int,
    workers: WorkerGroup | None = None,
) -> Dataset:
    """Distribute ``records`` round-robin over ``partition_count`` partitions."""
    if partition_count < 1:
        raise InvalidPartitionCount(f"partition_count must be >= 1, got {partition_count}")
    parts: list[list[Any]] = [[] for _ in range(partition_count)]
    for i, r in enumerate(records):
        parts[i % partition_count].append(r)
    return Dataset(
        workers or default_group(),
        partition_count,
        source=tuple(tuple(p) for p in parts),
    )
