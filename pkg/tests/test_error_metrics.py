import numpy as np
import pytest

from src.models.tensor_models import QTensor
from src.services.error_handler import ShapeMismatchError
from src.services.error_metrics import row_cosine, compare_arrays, compare, MetricsAccumulator


class TestCompare:

    def test_identical(self):
        metrics = compare_arrays(np.array([[0.5, -1.0, 2.0]]), np.array([[0.5, -1.0, 2.0]]))
        assert metrics.max_abs_error == 0.0
        assert metrics.mean_abs_error == 0.0
        assert metrics.cosine_similarity == pytest.approx(1.0)
        assert metrics.argmax_agreement == 1.0

    def test_orthogonal(self):
        metrics = compare_arrays(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert metrics.cosine_similarity == 0.0
        assert metrics.argmax_agreement == 0.0

    def test_dequantized_pair(self):
        metrics = compare(QTensor(data=[128, 0], scale=1.0 / 128.0, bits=16), np.array([0.727, 0.266]))
        assert metrics.max_abs_error == pytest.approx(0.273)
        assert metrics.count == 2

    def test_zero_rows(self):
        np.testing.assert_array_equal(row_cosine(np.zeros((1, 3)), np.zeros((1, 3))), [1.0])
        np.testing.assert_array_equal(row_cosine(np.zeros((1, 3)), np.ones((1, 3))), [0.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            compare_arrays(np.zeros(3), np.zeros(4))


class TestAccumulator:

    def test_weighted_merge(self):
        accumulator = MetricsAccumulator()
        accumulator.add_arrays(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]))
        accumulator.add_arrays(np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]]))
        merged = accumulator.result()
        assert merged.count == 4
        assert merged.rows == 2
        assert merged.max_abs_error == 1.0
        assert merged.mean_abs_error == pytest.approx(0.5)
        assert merged.cosine_similarity == pytest.approx(0.5)
        assert merged.argmax_agreement == pytest.approx(0.5)

    def test_empty(self):
        assert MetricsAccumulator().result().count == 0
