"""Trial fan-out across a worker pool.

Trial indices are cut into fixed-size chunks. With one job the chunks run in
this process; with more they go to a ProcessPoolExecutor through the event
loop. Either way the results come back in trial order, so nothing downstream
can tell how many workers produced them.

A set stop event ends the run between chunks with TrialsInterrupted.
"""

import asyncio
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Dict, List, Optional, Tuple, TypeVar

import config
from logger import setup_logger

logger = setup_logger(__name__)

T = TypeVar("T")


class TrialsInterrupted(Exception):
    """The stop event was set before every trial finished."""

    def __init__(self, completed: int, requested: int):
        super().__init__(f"interrupted after {completed} of {requested} trials")
        self.completed = completed
        self.requested = requested


def _run_chunk(task: Callable[[int], T], start: int, stop: int) -> List[T]:
    return [task(trial) for trial in range(start, stop)]


class _ProgressLog:
    """Log the first few chunks verbatim, then at most once per interval."""

    def __init__(self, verbose_count: int = 5, interval: float = 10.0):
        self._verbose_count = verbose_count
        self._interval = interval
        self._count = 0
        self._last_logged = time.monotonic()

    def should_log(self) -> bool:
        self._count += 1
        if self._count <= self._verbose_count:
            return True
        now = time.monotonic()
        if now - self._last_logged >= self._interval:
            self._last_logged = now
            return True
        return False

    @property
    def count(self) -> int:
        return self._count


class TrialRunner:
    def __init__(
        self,
        jobs: Optional[int] = None,
        chunk_size: Optional[int] = None,
        stop_event: Optional[asyncio.Event] = None,
    ):
        self.jobs = max(1, jobs if jobs is not None else config.JOBS)
        self.chunk_size = max(1, chunk_size if chunk_size is not None else config.TRIAL_CHUNK)
        self.stop_event = stop_event if stop_event is not None else asyncio.Event()

    def _chunks(self, trials: int) -> List[Tuple[int, int]]:
        return [
            (start, min(start + self.chunk_size, trials))
            for start in range(0, trials, self.chunk_size)
        ]

    async def run(self, task: Callable[[int], T], trials: int) -> List[T]:
        """Outcomes of task(0) .. task(trials - 1), in that order."""
        chunks = self._chunks(trials)
        progress = _ProgressLog()
        finished: Dict[int, List[T]] = {}

        def report(done: int) -> None:
            if progress.should_log():
                logger.info(f"Trials: {done}/{trials} done")

        if self.jobs == 1 or len(chunks) <= 1:
            for index, (start, stop) in enumerate(chunks):
                if self.stop_event.is_set():
                    break
                finished[index] = _run_chunk(task, start, stop)
                report(stop)
                # Yields so signal handlers get to set the stop event.
                await asyncio.sleep(0)
        else:
            await self._run_pool(task, chunks, finished, report)

        completed = sum(len(outcomes) for outcomes in finished.values())
        if completed < trials:
            logger.warning(f"Trials interrupted after {completed} of {trials}")
            raise TrialsInterrupted(completed, trials)
        return [outcome for index in range(len(chunks)) for outcome in finished[index]]

    async def _run_pool(self, task, chunks, finished, report) -> None:
        loop = asyncio.get_running_loop()
        pending: Dict[asyncio.Future, int] = {}
        queue = list(enumerate(chunks))
        done_count = 0
        with ProcessPoolExecutor(max_workers=self.jobs) as pool:
            while queue or pending:
                while queue and len(pending) < self.jobs and not self.stop_event.is_set():
                    index, (start, stop) = queue.pop(0)
                    future = loop.run_in_executor(pool, _run_chunk, task, start, stop)
                    pending[future] = index
                if not pending:
                    break
                done, _ = await asyncio.wait(pending, return_when=asyncio.FIRST_COMPLETED)
                for future in done:
                    index = pending.pop(future)
                    finished[index] = future.result()
                    done_count += len(finished[index])
                    report(done_count)
