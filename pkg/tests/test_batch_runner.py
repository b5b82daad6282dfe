import pytest

from src.services.error_handler import InvalidArgumentError
from src.services.integer_audit import integer_only, audit_active
from src.tasks.batch_runner import BatchRunner


class TestBatchRunner:

    @pytest.mark.parametrize("workers", [1, 4])
    def test_preserves_order(self, workers):
        assert BatchRunner(workers).run(lambda value: value * value, list(range(20))) == \
            [value * value for value in range(20)]

    def test_empty_input(self):
        assert BatchRunner(2).run(lambda value: value, []) == []

    def test_audit_state_reaches_workers(self):
        with integer_only():
            flags = BatchRunner(3).run(lambda _: audit_active(), range(6))
        assert flags == [True] * 6
        assert BatchRunner(3).run(lambda _: audit_active(), range(3)) == [False] * 3

    def test_worker_errors_propagate(self):
        def fail(value):
            raise InvalidArgumentError(f"bad {value}")

        with pytest.raises(InvalidArgumentError):
            BatchRunner(2).run(fail, [1, 2])

    def test_invalid_worker_count(self):
        with pytest.raises(InvalidArgumentError):
            BatchRunner(0)
