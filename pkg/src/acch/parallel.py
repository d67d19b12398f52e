"""Thread pool used for subdomain-parallel work.

Results are always combined in subdomain order by the caller, so the numbers
a run produces do not depend on the pool size; threads only change wall time.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


class WorkerPool:
    """Ordered map over a fixed set of worker threads.

    threads == 1 runs inline, which keeps single-threaded profiles clean and
    is the default for library use.
    """

    def __init__(self, threads: int = 1):
        if threads < 1:
            raise ValueError("threads must be >= 1")
        self.threads = int(threads)
        self._executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def map(self, fn, items) -> list:
        if self._executor is None:
            return [fn(item) for item in items]
        return list(self._executor.map(fn, items))

    def shutdown(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()
        return False
