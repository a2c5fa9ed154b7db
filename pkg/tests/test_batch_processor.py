import pytest

from core.batch_processor import BatchProcessor, default_workers
from core.errors import ProfileError


def square_or_fail(x):
    if x < 0:
        raise ProfileError(f"negative input {x}")
    return x * x


class TestProcessBatch:
    @pytest.mark.parametrize("workers", [1, 4])
    def test_results_sorted_by_key(self, workers):
        items = [(k, k) for k in (5, 3, 9, 1)]
        outcome = BatchProcessor(max_workers=workers).process_batch(items, square_or_fail)
        assert list(outcome.results) == [1, 3, 5, 9]
        assert outcome.results[9] == 81
        assert outcome.success == 4

    @pytest.mark.parametrize("workers", [1, 4])
    def test_domain_errors_recorded(self, workers):
        items = [("b", -2), ("a", 2), ("c", -1)]
        outcome = BatchProcessor(max_workers=workers).process_batch(items, square_or_fail)
        assert outcome.results == {"a": 4}
        assert outcome.summary() == {
            "success": 1, "failed": 2, "skipped": 0,
            "errors": ["b: negative input -2", "c: negative input -1"],
        }

    @pytest.mark.parametrize("workers", [1, 4])
    def test_bugs_propagate(self, workers):
        def broken(x):
            raise ZeroDivisionError("bug")

        with pytest.raises(ZeroDivisionError):
            BatchProcessor(max_workers=workers).process_batch([(1, 1), (2, 2)], broken)

    def test_stop_skips_remaining(self):
        processor = BatchProcessor(max_workers=1)

        def stop_after_first(x):
            processor.stop_processing()
            return x

        outcome = processor.process_batch([(k, k) for k in range(3)], stop_after_first)
        assert outcome.success == 1
        assert outcome.skipped == 2

    def test_empty_batch(self):
        outcome = BatchProcessor(max_workers=2).process_batch([], square_or_fail)
        assert outcome.results == {}


def test_default_workers():
    assert default_workers() >= 1
    assert BatchProcessor().max_workers >= 1
