from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from ..config.settings import settings
from ..services.error_handler import InvalidArgumentError


class RequantRounding(str, Enum):
    """重量化移位的取整方式"""
    NEAREST = "nearest"  # 先加 2^(c-1) 再右移
    FLOOR = "floor"      # 纯右移


class QuantParams(BaseModel):
    """对称均匀量化参数: 截断值 m、位宽 k、尺度 S = 2m/(2^k-1)"""
    model_config = ConfigDict(frozen=True)

    m: float
    k: int
    S: float

    @model_validator(mode='after')
    def _check_params(self) -> 'QuantParams':
        if not (np.isfinite(self.m) and self.m > 0):
            raise InvalidArgumentError(f"截断值 m 必须为有限正数: {self.m}")
        if not 2 <= self.k <= 32:
            raise InvalidArgumentError(f"位宽 k 必须在 [2, 32] 内: {self.k}")
        if self.S != 2.0 * self.m / float((1 << self.k) - 1):
            raise InvalidArgumentError(f"尺度与截断值不一致: S={self.S}, m={self.m}, k={self.k}")
        return self

    @classmethod
    def from_clip(cls, m: float, k: int) -> 'QuantParams':
        """由截断值和位宽构造"""
        m = float(m)
        if not 2 <= k <= 32:
            raise InvalidArgumentError(f"位宽 k 必须在 [2, 32] 内: {k}")
        return cls(m=m, k=k, S=2.0 * m / float((1 << k) - 1))

    @property
    def qmax(self) -> int:
        return (1 << (self.k - 1)) - 1


class DyadicScale(BaseModel):
    """二进分数 b/2^c，用一次整数乘法和一次移位完成重缩放"""
    model_config = ConfigDict(frozen=True)

    b: int
    c: int

    @field_validator('b')
    @classmethod
    def _check_b(cls, value: int) -> int:
        if not 0 <= value < (1 << 32):
            raise InvalidArgumentError(f"二进分数乘子 b 必须在 [0, 2^32) 内: {value}")
        return value

    @field_validator('c')
    @classmethod
    def _check_c(cls, value: int) -> int:
        if not 0 <= value <= 62:
            raise InvalidArgumentError(f"二进分数移位 c 必须在 [0, 62] 内: {value}")
        return value

    @property
    def value(self) -> float:
        """表示的实数值(仅用于报告)"""
        return self.b / float(1 << self.c)

    def to_manifest_dict(self) -> dict:
        return {'b': self.b, 'c': self.c}


class ExpFixed(BaseModel):
    """ShiftExp 的定点结果: S_exp·I_exp ≈ e^(S·I)"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    I_exp: np.ndarray
    S_exp: float


class IntMathConfig(BaseModel):
    """整数基础算子配置"""
    model_config = ConfigDict(frozen=True)

    N: int = 15
    M: int = 47
    iters: int = 10

    @field_validator('N')
    @classmethod
    def _check_n(cls, value: int) -> int:
        if not 8 <= value <= 20:
            raise InvalidArgumentError(f"N 必须在 [8, 20] 内: {value}")
        return value

    @field_validator('M')
    @classmethod
    def _check_m(cls, value: int) -> int:
        if not 40 <= value <= 60:
            raise InvalidArgumentError(f"M 必须在 [40, 60] 内: {value}")
        return value

    @field_validator('iters')
    @classmethod
    def _check_iters(cls, value: int) -> int:
        if value < 1:
            raise InvalidArgumentError(f"迭代次数必须 >= 1: {value}")
        return value

    @classmethod
    def from_settings(cls) -> 'IntMathConfig':
        return cls(N=settings.shift_exp_n, M=settings.int_div_m, iters=settings.isqrt_iters)


class KernelConfig(BaseModel):
    """层算子配置: 整数基础算子参数 + 重量化取整方式 + LayerNorm 精度"""
    model_config = ConfigDict(frozen=True)

    int_math: IntMathConfig = IntMathConfig()
    requant_rounding: RequantRounding = RequantRounding.NEAREST
    layernorm_precision: int = 15
    dyadic_shift: int = 30

    @field_validator('layernorm_precision')
    @classmethod
    def _check_precision(cls, value: int) -> int:
        if not 1 <= value <= 24:
            raise InvalidArgumentError(f"LayerNorm 精度 p 必须在 [1, 24] 内: {value}")
        return value

    @field_validator('dyadic_shift')
    @classmethod
    def _check_shift(cls, value: int) -> int:
        if not 0 <= value <= 62:
            raise InvalidArgumentError(f"二进分数移位必须在 [0, 62] 内: {value}")
        return value

    @classmethod
    def from_settings(cls) -> 'KernelConfig':
        return cls(
            int_math=IntMathConfig.from_settings(),
            requant_rounding=RequantRounding(settings.requant_rounding),
            layernorm_precision=settings.layernorm_precision,
            dyadic_shift=settings.dyadic_shift,
        )
