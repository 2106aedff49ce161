from __future__ import annotations

import logging
import threading
from concurrent.futures import Executor, Future, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

log = logging.getLogger("tweetpipe.stream")


class StreamError(RuntimeError):
    pass

class TaskError(StreamError):
    """A user function failed while materializing one partition."""

    def __init__(self, partition: int, cause: BaseException) -> None:
        super().__init__(f"task for partition {partition} failed: {cause!r}")
        self.partition = partition
        self.cause = cause


@dataclass
class WorkerGroup:
    """N parallel workers executing per-partition tasks for the driver.

    ``thread`` workers run any callable; ``process`` workers need picklable
    (module-level) functions and data.
    """

    worker_count: int = 1
    executor: str = "thread"

    def __post_init__(self) -> None:
        if self.worker_count < 1:
            raise ValueError(f"worker_count must be >= 1, got {self.worker_count}")
        self._executor: Executor
        if self.executor == "thread":
            self._executor = ThreadPoolExecutor(max_workers=self.worker_count, thread_name_prefix="tweetpipe-worker")
        elif self.executor == "process":
            self._executor = ProcessPoolExecutor(max_workers=self.worker_count)
        else:
            raise ValueError(f"unknown executor: {self.executor}")
        self._lock = threading.Lock()
        self._tasks_run = 0
        self._closed = False

    @property
    def tasks_run(self) -> int:
        with self._lock:
            return self._tasks_run

    def run_tasks(self, fn: Callable[..., Any], args: Sequence[tuple[Any, ...]]) -> list[Any]:
        """Run ``fn(*a)`` once per entry of ``args``; results keep input order.

        The first failing task raises ``TaskError`` with its partition index.
        """
        futures: list[Future] = [self._executor.submit(fn, *a) for a in args]
        with self._lock:
            self._tasks_run += len(futures)
        results: list[Any] = []
        failure: TaskError | None = None
        for i, fut in enumerate(futures):
            try:
                results.append(fut.result())
            except Exception as e:
                if failure is None:
                    failure = TaskError(i, e)
                results.append(None)
        if failure is not None:
            raise failure
        return results

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
        self._executor.shutdown(wait=True)

    def __enter__(self) -> "WorkerGroup":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
