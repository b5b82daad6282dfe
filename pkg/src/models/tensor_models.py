from enum import Enum
from typing import Tuple, Any

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidatorFunctionWrapHandler, field_validator, model_validator

from ..services.error_handler import InvalidArgumentError
from ..services.integer_audit import AuditedScale


class TensorKind(str, Enum):
    """张量类型枚举(与 ITNS dtype 字段对应)"""
    FP = "fp"
    INT = "int"


def _check_dims(arr: np.ndarray):
    if arr.ndim == 0:
        raise InvalidArgumentError("张量至少需要一个维度")
    if any(extent <= 0 for extent in arr.shape):
        raise InvalidArgumentError(f"张量维度必须为正: {arr.shape}")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class FpTensor(BaseModel):
    """浮点张量，64 位实数，行优先存储；浮点参考实现和量化输入使用"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray

    @field_validator('data', mode='before')
    @classmethod
    def _coerce_data(cls, value: Any) -> np.ndarray:
        arr = np.array(value, dtype=np.float64, copy=True)
        _check_dims(arr)
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("浮点张量包含 NaN/Inf")
        return _freeze(arr)

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(int(extent) for extent in self.data.shape)

    @property
    def numel(self) -> int:
        return int(self.data.size)

    @property
    def kind(self) -> TensorKind:
        return TensorKind.FP

    def __eq__(self, other: object) -> bool:
        # 位级相等：dims 相同且 payload 字节完全一致
        if not isinstance(other, FpTensor):
            return NotImplemented
        return self.dims == other.dims and self.data.tobytes() == other.data.tobytes()

    def __hash__(self) -> int:
        return hash((self.dims, self.data.tobytes()))

    def __repr__(self) -> str:
        return f"FpTensor(dims={self.dims})"


class QTensor(BaseModel):
    """
    整数张量：内存中统一以 int64 存储，声明逻辑位宽 k 和实数尺度 S，
    表示实数值 R ≈ S·I
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray
    scale: float
    bits: int

    @field_validator('data', mode='before')
    @classmethod
    def _coerce_data(cls, value: Any) -> np.ndarray:
        arr = np.asarray(value)
        if arr.dtype.kind not in ('i', 'u', 'b'):
            raise InvalidArgumentError(f"整数张量数据必须是整数类型，得到 {arr.dtype}")
        arr = np.array(arr, dtype=np.int64, copy=True)
        _check_dims(arr)
        return _freeze(arr)

    @field_validator('scale', mode='wrap')
    @classmethod
    def _check_scale(cls, value: Any, handler: ValidatorFunctionWrapHandler) -> float:
        scale = handler(value)
        if not np.isfinite(scale) or scale <= 0:
            raise InvalidArgumentError(f"尺度必须为有限正数: {value}")
        # 受审计的尺度原样保留，使后续对它的运算仍受检查
        return value if isinstance(value, AuditedScale) else float(scale)

    @field_validator('bits')
    @classmethod
    def _check_bits(cls, value: int) -> int:
        if not 2 <= value <= 32:
            raise InvalidArgumentError(f"位宽必须在 [2, 32] 内: {value}")
        return value

    @model_validator(mode='after')
    def _check_range(self) -> 'QTensor':
        low, high = -(1 << (self.bits - 1)), (1 << (self.bits - 1)) - 1
        if self.data.size and (self.data.min() < low or self.data.max() > high):
            raise InvalidArgumentError(
                f"整数超出 {self.bits} 位范围 [{low}, {high}]: "
                f"min={int(self.data.min())}, max={int(self.data.max())}")
        return self

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(int(extent) for extent in self.data.shape)

    @property
    def numel(self) -> int:
        return int(self.data.size)

    @property
    def kind(self) -> TensorKind:
        return TensorKind.INT

    def with_data(self, data: np.ndarray) -> 'QTensor':
        """保持尺度和位宽，替换数据(用于切片、重排)"""
        return QTensor(data=data, scale=self.scale, bits=self.bits)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QTensor):
            return NotImplemented
        return (self.dims == other.dims
                and self.bits == other.bits
                and np.float64(self.scale).tobytes() == np.float64(other.scale).tobytes()
                and self.data.tobytes() == other.data.tobytes())

    def __hash__(self) -> int:
        return hash((self.dims, self.bits, self.scale, self.data.tobytes()))

    def __repr__(self) -> str:
        return f"QTensor(dims={self.dims}, scale={self.scale!r}, bits={self.bits})"
