import logging
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field

import psutil
from tqdm import tqdm

from .errors import PlatoonScopeError

logger = logging.getLogger(__name__)


def default_workers():
    """Physical core count, falling back to logical cores, then 1."""
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


@dataclass
class BatchResult:
    """Outcome of one batch: per-item results plus failure bookkeeping."""

    results: dict = field(default_factory=dict)
    success: int = 0
    failed: int = 0
    skipped: int = 0
    errors: list = field(default_factory=list)

    def summary(self):
        return {
            'success': self.success,
            'failed': self.failed,
            'skipped': self.skipped,
            'errors': list(self.errors),
        }


class BatchProcessor:
    """Run one function over many independent items on a thread pool.

    Items are ``(key, value)`` pairs. Domain errors raised for one item are
    recorded against its key and the batch carries on; any other exception
    is a bug and propagates. Results are returned sorted by key so callers
    never see completion order.
    """

    def __init__(self, max_workers=None, show_progress=False):
        # None means "use every physical core"
        self.max_workers = max_workers or default_workers()
        self.show_progress = show_progress
        self._stop = threading.Event()

    def process_batch(self, items, fn, label="batch"):
        """Apply `fn` to every item value and collect a `BatchResult`."""
        self._stop.clear()
        items = list(items)
        outcome = BatchResult()
        raw = {}
        failures = {}

        progress = tqdm(total=len(items), desc=label, disable=not self.show_progress, leave=False)
        try:
            if self.max_workers <= 1 or len(items) <= 1:
                # Inline path keeps tracebacks simple and avoids pool overhead
                for key, value in items:
                    if self._stop.is_set():
                        outcome.skipped += 1
                        continue
                    self._run_one(key, value, fn, raw, failures)
                    progress.update(1)
            else:
                with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
                    future_to_key = {
                        executor.submit(self._guarded, fn, value): key
                        for key, value in items
                    }
                    for future in as_completed(future_to_key):
                        key = future_to_key[future]
                        if self._stop.is_set():
                            future.cancel()
                            outcome.skipped += 1
                            continue
                        ok, value = future.result()
                        if ok:
                            raw[key] = value
                        else:
                            failures[key] = value
                        progress.update(1)
        finally:
            progress.close()

        # Canonical order regardless of completion order
        outcome.results = {key: raw[key] for key in sorted(raw)}
        outcome.success = len(raw)
        outcome.failed = len(failures)
        outcome.errors = [f"{key}: {failures[key]}" for key in sorted(failures)]
        if failures:
            logger.info("%s: %d of %d items failed", label, len(failures), len(items))
        return outcome

    @staticmethod
    def _guarded(fn, value):
        try:
            return True, fn(value)
        except PlatoonScopeError as e:
            return False, str(e)

    def _run_one(self, key, value, fn, raw, failures):
        ok, result = self._guarded(fn, value)
        if ok:
            raw[key] = result
        else:
            failures[key] = result

    def stop_processing(self):
        """Ask the batch to stop; remaining items are counted as skipped."""
        self._stop.set()
