"""
整数输出与浮点参考的误差统计
"""

from typing import Union

import numpy as np

from ..models.tensor_models import FpTensor, QTensor
from ..models.report_models import ErrorMetrics
from .error_handler import ShapeMismatchError
from .quantizer import dequantize


def _rowwise(values: np.ndarray) -> np.ndarray:
    return values.reshape(1, -1) if values.ndim <= 1 else values.reshape(-1, values.shape[-1])


def row_cosine(approx: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """逐行余弦相似度；两行都为零时取 1，只有一行为零时取 0"""
    dot = np.sum(approx * reference, axis=-1)
    norms = np.linalg.norm(approx, axis=-1) * np.linalg.norm(reference, axis=-1)
    both_zero = (np.linalg.norm(approx, axis=-1) == 0) & (np.linalg.norm(reference, axis=-1) == 0)
    cosine = np.divide(dot, norms, out=np.zeros_like(dot), where=norms > 0)
    return np.where(both_zero, 1.0, np.clip(cosine, -1.0, 1.0))


def compare_arrays(approx: np.ndarray, reference: np.ndarray) -> ErrorMetrics:
    """
    两个实数数组的误差统计(按最后一维分行)

    Args:
        approx: 近似值
        reference: 参考值

    Returns:
        最大/平均绝对误差、平均逐行余弦相似度、逐行 argmax 一致率
    """
    approx = np.asarray(approx, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if approx.shape != reference.shape:
        raise ShapeMismatchError(f"比较形状不一致: {approx.shape} vs {reference.shape}")
    if approx.size == 0:
        return ErrorMetrics()

    error = np.abs(approx - reference)
    approx_rows, reference_rows = _rowwise(approx), _rowwise(reference)
    agreement = np.argmax(approx_rows, axis=-1) == np.argmax(reference_rows, axis=-1)
    return ErrorMetrics(
        count=int(error.size),
        rows=int(approx_rows.shape[0]),
        max_abs_error=float(error.max()),
        mean_abs_error=float(error.mean()),
        cosine_similarity=float(row_cosine(approx_rows, reference_rows).mean()),
        argmax_agreement=float(agreement.mean()),
    )


def compare(int_out: QTensor, fp_out: Union[FpTensor, np.ndarray]) -> ErrorMetrics:
    """反量化整数输出后与浮点参考比较"""
    reference = fp_out.data if isinstance(fp_out, FpTensor) else np.asarray(fp_out)
    return compare_arrays(dequantize(int_out).data, reference)


class MetricsAccumulator:
    """跨多次比较合并误差统计(按元素数 / 行数加权)"""

    def __init__(self):
        self.count = 0
        self.rows = 0
        self.max_abs_error = 0.0
        self._error_sum = 0.0
        self._cosine_sum = 0.0
        self._agreement_sum = 0.0

    def add(self, metrics: ErrorMetrics):
        if metrics.count == 0:
            return
        self.count += metrics.count
        self.rows += metrics.rows
        self.max_abs_error = max(self.max_abs_error, metrics.max_abs_error)
        self._error_sum += metrics.mean_abs_error * metrics.count
        self._cosine_sum += metrics.cosine_similarity * metrics.rows
        self._agreement_sum += metrics.argmax_agreement * metrics.rows

    def add_arrays(self, approx: np.ndarray, reference: np.ndarray):
        self.add(compare_arrays(approx, reference))

    def result(self) -> ErrorMetrics:
        if self.count == 0:
            return ErrorMetrics()
        return ErrorMetrics(
            count=self.count,
            rows=self.rows,
            max_abs_error=self.max_abs_error,
            mean_abs_error=self._error_sum / self.count,
            cosine_similarity=self._cosine_sum / self.rows,
            argmax_agreement=min(self._agreement_sum / self.rows, 1.0),
        )
