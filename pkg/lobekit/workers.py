"""
Job runners for long operations (phantom generation, ablation arms).

Jobs run sequentially in this process or in a process pool; results always come
back in submission order, so output does not depend on the worker count.
"""

import inspect
import logging
import threading
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from .errors import LobekitError

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[int, int, str], None]


class JobCancelled(LobekitError):
    """Raised when a run is cancelled before all jobs finished."""


@dataclass
class Job:
    """
    A picklable unit of work.

    Attributes:
        func: Module-level callable
        args: Positional arguments
        kwargs: Keyword arguments
        name: Label used in progress messages and logs
    """
    func: Callable[..., Any]
    args: Tuple[Any, ...] = ()
    kwargs: Dict[str, Any] = field(default_factory=dict)
    name: str = ''

    def __call__(self) -> Any:
        return self.func(*self.args, **self.kwargs)


class Worker:
    """
    Runs one job in the calling thread with progress reporting and cancellation.

    If the job's function takes a `progress_callback` argument, the worker
    passes its own reporter in.
    """

    def __init__(self, job: Job, progress_callback: Optional[ProgressCallback] = None):
        self.job = job
        self.progress_callback = progress_callback
        self._is_cancelled = False

    def run(self) -> Any:
        if self._is_cancelled:
            raise JobCancelled(f"job {self.job.name or self.job.func.__name__} was cancelled")
        kwargs = dict(self.job.kwargs)
        if self.progress_callback and 'progress_callback' in inspect.signature(self.job.func).parameters:
            kwargs.setdefault('progress_callback', self.report_progress)
        return self.job.func(*self.job.args, **kwargs)

    def report_progress(self, current: int, total: int, message: str = "") -> None:
        if not self._is_cancelled and self.progress_callback:
            self.progress_callback(current, total, message)

    def cancel(self) -> None:
        self._is_cancelled = True


def run_workers(
    jobs: Sequence[Job],
    threads: int = 1,
    progress_callback: Optional[ProgressCallback] = None,
    cancel_event: Optional[threading.Event] = None,
) -> List[Any]:
    """
    Run jobs and return their results in submission order.

    Args:
        jobs: Jobs to run
        threads: 1 runs in-process; more uses a process pool of that size
        progress_callback: Called as (finished, total, job name) after each job
        cancel_event: When set, pending jobs are dropped and JobCancelled raised

    Raises:
        JobCancelled: the event was set before every job finished
        Exception: the first job failure, re-raised
    """
    jobs = list(jobs)
    total = len(jobs)
    results: List[Any] = [None] * total

    def cancelled() -> bool:
        return cancel_event is not None and cancel_event.is_set()

    if threads <= 1 or total <= 1:
        for i, job in enumerate(jobs):
            if cancelled():
                raise JobCancelled(f"cancelled after {i} of {total} jobs")
            results[i] = Worker(job, progress_callback if total == 1 else None).run()
            if progress_callback:
                progress_callback(i + 1, total, job.name)
        return results

    logger.debug("starting process pool", extra={'workers': threads, 'jobs': total})
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = {pool.submit(job.func, *job.args, **job.kwargs): i for i, job in enumerate(jobs)}
        pending = set(futures)
        finished = 0
        while pending:
            done, pending = wait(pending, timeout=0.5, return_when=FIRST_COMPLETED)
            for future in done:
                i = futures[future]
                results[i] = future.result()
                finished += 1
                if progress_callback:
                    progress_callback(finished, total, jobs[i].name)
            if cancelled():
                for future in pending:
                    future.cancel()
                raise JobCancelled(f"cancelled after {finished} of {total} jobs")
    return results
