"""
整数基础算子: 算术移位、ShiftExp、IntDiv、整数迭代开方

所有函数对整数数组逐元素计算(int64)，纯函数、无状态。
"""

import math
from typing import Optional, Tuple, Union

import numpy as np

from ..models.quant_models import ExpFixed, IntMathConfig
from .error_handler import DomainError, InvalidArgumentError, KernelPreconditionError
from .integer_audit import guard_real_arithmetic
from .saturation_tracker import saturation_tracker
from ..utils.logger import get_logger

logger = get_logger("int_math")

IntLike = Union[int, np.ndarray]

INT_DIV_LIMIT = 1 << 31
ISQRT_LIMIT = 1 << 62
# 除数与 2^M 之间至少保留 2^16 的余量
INT_DIV_HEADROOM_BITS = 16


def _as_int64(values: IntLike) -> np.ndarray:
    return np.asarray(values, dtype=np.int64)


def arith_rshift(x: IntLike, s: int) -> IntLike:
    """
    算术右移(符号扩展)，等价于 floor(x / 2^s)

    Args:
        x: 有符号整数或整数数组
        s: 移位量 [0, 62]
    """
    if not 0 <= s <= 62:
        raise InvalidArgumentError(f"移位量必须在 [0, 62] 内: {s}")
    if isinstance(x, (int, np.integer)):
        return int(x) >> s
    return np.right_shift(_as_int64(x), s)


def round_div(num: IntLike, den: IntLike) -> np.ndarray:
    """整数除法，四舍五入且 .5 远离零(den > 0)"""
    num = _as_int64(num)
    den = _as_int64(den)
    magnitude = np.floor_divide(2 * np.abs(num) + den, 2 * den)
    return np.where(num < 0, -magnitude, magnitude)


def bit_length(values: IntLike) -> np.ndarray:
    """最高有效位位置加一(0 的位长为 0)，仅整数运算"""
    v = _as_int64(values).copy()
    length = np.zeros_like(v)
    for step in (32, 16, 8, 4, 2, 1):
        upper = np.right_shift(v, step)
        has_upper = upper > 0
        length = np.where(has_upper, length + step, length)
        v = np.where(has_upper, upper, v)
    return length + (v > 0)


def exp_unit(S: float) -> int:
    """
    I_0 = round(1/S)，ShiftExp 中 1.0 对应的整数

    构建期调用；整数推理时使用预先计算好的值。
    """
    guard_real_arithmetic("shift_exp.I_0")
    i0 = math.floor(1.0 / S + 0.5)
    if i0 < 1:
        raise DomainError(f"输入尺度过大，round(1/S) < 1: S={S}")
    return int(i0)


def shift_exp_int(I: IntLike, i0: int, N: int) -> np.ndarray:
    """
    ShiftExp 的纯整数部分

    I_p = I + (I>>1) - (I>>4)          以 (1.0111)_b 近似 log2(e)
    q = floor(I_p / -I_0), r ∈ [0, I_0) 整数部分与小数部分
    I_b = ((-r)>>1) + I_0              2^(-r/I_0) 的线性近似
    I_exp = I_b << (N-q)，q > N 时改为 I_b >> (q-N)

    Args:
        I: 非正整数数组
        i0: round(1/S)
        N: 左移余量

    Returns:
        I_exp，满足 0 <= I_exp <= I_0·2^N
    """
    I = _as_int64(I)
    if I.size and int(I.max()) > 0:
        raise DomainError("ShiftExp 输入必须非正(调用方需先减去最大值)")
    if i0 < 1:
        raise DomainError(f"I_0 必须 >= 1: {i0}")

    I_p = I + np.right_shift(I, 1) - np.right_shift(I, 4)
    q = np.floor_divide(I_p, -i0)
    r = -(I_p + q * i0)
    I_b = np.right_shift(-r, 1) + i0

    left = np.left_shift(I_b, np.clip(N - q, 0, 62))
    right = np.right_shift(I_b, np.clip(q - N, 0, 63))
    return np.where(q <= N, left, right)


def shift_exp(I: IntLike, S: float, cfg: IntMathConfig, i0: Optional[int] = None) -> ExpFixed:
    """
    ShiftExp: 用移位近似 e^(S·I)(I <= 0)

    Args:
        I: 非正整数数组
        S: 输入尺度
        cfg: 整数算子配置
        i0: 预先计算的 round(1/S)，给定时不做任何实数运算

    Returns:
        (I_exp, S_exp = S/2^N)
    """
    if i0 is None:
        i0 = exp_unit(S)
    I_exp = shift_exp_int(I, i0, cfg.N)
    return ExpFixed(I_exp=I_exp, S_exp=S / float(1 << cfg.N))


def int_div_unit_scale(k_out: int) -> float:
    """IntDiv 输出尺度 1/2^(k_out-1)；整数推理路径应使用构建时存储的值"""
    guard_real_arithmetic("int_div.scale")
    return 1.0 / float(1 << (k_out - 1))


def int_div_quotient(I1: IntLike, I2: IntLike, k_out: int, cfg: IntMathConfig,
                     site: str = "int_div") -> np.ndarray:
    """
    IntDiv 的整数部分: I_out = (floor(2^M / I2)·I1) >> (M - (k_out-1))

    Args:
        I1: 非负被除数
        I2: 正除数，I1 <= I2 < 2^31
        k_out: 输出位宽 [2, 16]
        cfg: 整数算子配置
        site: 饱和统计的站点名

    Returns:
        I_out ∈ [0, 2^(k_out-1)-1]
    """
    if not 2 <= k_out <= 16:
        raise InvalidArgumentError(f"IntDiv 输出位宽必须在 [2, 16] 内: {k_out}")
    I1 = _as_int64(I1)
    I2 = np.broadcast_to(_as_int64(I2), I1.shape)

    if np.any(I2 == 0):
        raise DomainError("IntDiv 除数为零")
    if np.any(I2 < 0) or np.any(I1 < 0):
        raise InvalidArgumentError("IntDiv 只接受非负被除数和正除数")
    if np.any(I1 > I2):
        raise InvalidArgumentError("IntDiv 要求 I1 <= I2(比值不超过 1)")
    peak = int(I2.max()) if I2.size else 0
    if peak >= INT_DIV_LIMIT:
        raise KernelPreconditionError(f"IntDiv 除数超过 2^31: {peak}")
    if peak << INT_DIV_HEADROOM_BITS > (1 << cfg.M):
        raise KernelPreconditionError(f"2^M 相对除数余量不足: M={cfg.M}, 除数={peak}")

    reciprocal = np.floor_divide(np.int64(1 << cfg.M), I2)
    quotient = np.right_shift(reciprocal * I1, cfg.M - (k_out - 1))

    qmax = (1 << (k_out - 1)) - 1
    clamped = int(np.count_nonzero(quotient > qmax))
    if clamped:
        saturation_tracker.record(site, clamped, quotient.size)
    return np.minimum(quotient, qmax)


def int_div(I1: IntLike, I2: IntLike, k_out: int, cfg: IntMathConfig,
            site: str = "int_div", out_scale: Optional[float] = None) -> Tuple[np.ndarray, float]:
    """
    IntDiv: 整数商及其尺度

    Args:
        out_scale: 预先计算的 1/2^(k_out-1)；缺省时现场计算(整数推理审计下不允许)

    Returns:
        (I_out, S_out = 1/2^(k_out-1))
    """
    quotient = int_div_quotient(I1, I2, k_out, cfg, site=site)
    return quotient, int_div_unit_scale(k_out) if out_scale is None else out_scale


def int_isqrt(v: IntLike, cfg: IntMathConfig) -> np.ndarray:
    """
    整数迭代开方: I_{i+1} = (I_i + floor(v/I_i)) >> 1，固定迭代 cfg.iters 次

    初值 I_0 = 2^floor(bit(v)/2)；v = 0 时返回 0。结果与 floor(sqrt(v)) 相差不超过 1。

    Args:
        v: 非负整数数组，v < 2^62
        cfg: 整数算子配置
    """
    v = _as_int64(v)
    if v.size and (int(v.min()) < 0 or int(v.max()) >= ISQRT_LIMIT):
        raise InvalidArgumentError("整数开方输入必须在 [0, 2^62) 内")

    root = np.left_shift(np.ones_like(v), bit_length(v) // 2)
    for _ in range(cfg.iters):
        divisor = np.where(root == 0, 1, root)
        root = np.right_shift(root + np.floor_divide(v, divisor), 1)
    return np.where(v == 0, 0, root)
