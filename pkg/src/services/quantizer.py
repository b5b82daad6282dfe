import math
from typing import Optional, Tuple

import numpy as np

from ..models.tensor_models import FpTensor, QTensor
from ..models.quant_models import QuantParams, DyadicScale, RequantRounding
from .error_handler import InvalidArgumentError, QuantRangeError, KernelPreconditionError
from .integer_audit import guard_real_arithmetic
from .saturation_tracker import saturation_tracker
from ..utils.logger import get_logger

logger = get_logger("quantizer")

DEFAULT_DYADIC_SHIFT = 30
DYADIC_B_LIMIT = 1 << 32
# b·|I| + 2^(c-1) 必须落在 int64 内
PRODUCT_LIMIT = 1 << 62


def sym_qmax(bits: int) -> int:
    """对称量化的最大整数 2^(k-1)-1"""
    return (1 << (bits - 1)) - 1


def round_half_away(values: np.ndarray) -> np.ndarray:
    """四舍五入，.5 远离零"""
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def clamp_symmetric(values: np.ndarray, bits: int) -> Tuple[np.ndarray, int]:
    """
    钳位到对称整数范围 [-(2^(k-1)-1), 2^(k-1)-1]

    Returns:
        (钳位后数组, 被钳位的元素数)
    """
    qmax = sym_qmax(bits)
    clamped_count = int(np.count_nonzero((values > qmax) | (values < -qmax)))
    return np.clip(values, -qmax, qmax), clamped_count


def calibrate_minmax(t: FpTensor, k: int) -> QuantParams:
    """
    min-max 校准: m = max(|min|, |max|)；全零张量取 m = 1

    Args:
        t: 浮点张量(非空)
        k: 量化位宽

    Returns:
        量化参数
    """
    guard_real_arithmetic("calibrate_minmax")
    if t.numel == 0:
        raise InvalidArgumentError("校准张量不能为空")
    m = max(abs(float(t.data.min())), abs(float(t.data.max())))
    if m == 0.0:
        logger.warning("校准张量全为零，截断值退化为 m=1")
        m = 1.0
    return QuantParams.from_clip(m, k)


def quantize(t: FpTensor, p: QuantParams) -> QTensor:
    """
    对称均匀量化 I = round(clip(R, -m, m) / S)，再钳位到 ±(2^(k-1)-1)

    Args:
        t: 浮点张量
        p: 量化参数

    Returns:
        尺度为 S、位宽为 k 的整数张量
    """
    guard_real_arithmetic("quantize")
    clipped = np.clip(t.data, -p.m, p.m)
    ints = round_half_away(clipped / p.S)
    ints = np.clip(ints, -p.qmax, p.qmax).astype(np.int64)
    return QTensor(data=ints, scale=p.S, bits=p.k)


def quantize_at_scale(values: np.ndarray, scale: float, bits: int) -> QTensor:
    """
    按给定尺度量化(尺度不来自 m，例如 Shiftmax 输出尺度 1/2^(k-1))

    Args:
        values: 实数数组
        scale: 目标尺度
        bits: 目标位宽
    """
    guard_real_arithmetic("quantize_at_scale")
    ints = round_half_away(np.asarray(values, dtype=np.float64) / scale)
    qmax = sym_qmax(bits)
    return QTensor(data=np.clip(ints, -qmax, qmax).astype(np.int64), scale=scale, bits=bits)


def dequantize(q: QTensor) -> FpTensor:
    """反量化 R = S·I"""
    guard_real_arithmetic("dequantize")
    return FpTensor(data=q.scale * q.data.astype(np.float64))


def to_dyadic(x: float, c: int) -> DyadicScale:
    """
    将正实数转换为二进分数 b/2^c，b = round(x·2^c)

    Raises:
        QuantRangeError: b 超出 32 位，需要调用方减小 c
    """
    guard_real_arithmetic("to_dyadic")
    if not (math.isfinite(x) and x > 0):
        raise InvalidArgumentError(f"二进分数只接受有限正数: {x}")
    if not 0 <= c <= 62:
        raise InvalidArgumentError(f"移位 c 必须在 [0, 62] 内: {c}")
    b = math.floor(math.ldexp(x, c) + 0.5)
    if b >= DYADIC_B_LIMIT:
        raise QuantRangeError(f"二进分数乘子溢出: x={x}, c={c}, b={b}")
    return DyadicScale(b=b, c=c)


def dyadic_for(x: float, c: Optional[int] = None) -> DyadicScale:
    """
    默认移位 c(通常为 30)下的二进分数；b 溢出时自动减小 c

    Args:
        x: 正实数缩放因子
        c: 起始移位

    Returns:
        二进分数
    """
    c = DEFAULT_DYADIC_SHIFT if c is None else c
    while True:
        try:
            dyadic = to_dyadic(x, c)
            break
        except QuantRangeError:
            if c == 0:
                raise
            c -= 1
    if dyadic.b == 0:
        logger.warning(f"缩放因子 {x} 在 c={c} 下量化为 0，该路径输出恒为零")
    return dyadic


def rescale_int(values: np.ndarray, d: DyadicScale,
                rounding: RequantRounding = RequantRounding.NEAREST) -> np.ndarray:
    """
    整数重缩放 y = (b·I + 2^(c-1)) >> c (nearest) 或 (b·I) >> c (floor)，不钳位

    Raises:
        KernelPreconditionError: b·|I| 可能超出 int64
    """
    values = np.asarray(values, dtype=np.int64)
    if values.size:
        peak = int(np.max(np.abs(values)))
        if d.b * peak >= PRODUCT_LIMIT:
            raise KernelPreconditionError(
                f"重量化乘积溢出: b={d.b}, max|I|={peak}")
    product = values * np.int64(d.b)
    if d.c == 0:
        return product
    if rounding == RequantRounding.NEAREST:
        product = product + np.int64(1 << (d.c - 1))
    return np.right_shift(product, d.c)


def requantize_int(values: np.ndarray, d: DyadicScale, k_out: int, out_scale: float,
                   rounding: RequantRounding = RequantRounding.NEAREST,
                   site: str = "requantize") -> QTensor:
    """
    32 位整数累加器重量化到 k_out 位，输出尺度直接沿用调用方给定的 out_scale

    累加器尺度只体现在 d 中，这里不读取也不计算任何实数尺度。
    """
    scaled = rescale_int(values, d, rounding)
    out, clamped = clamp_symmetric(scaled, k_out)
    saturation_tracker.record(site, clamped, out.size)
    return QTensor(data=out, scale=out_scale, bits=k_out)


def requantize(acc: QTensor, d: DyadicScale, k_out: int, out_scale: float,
               rounding: RequantRounding = RequantRounding.NEAREST,
               site: str = "requantize") -> QTensor:
    """
    32 位累加器重量化到 k_out 位

    Args:
        acc: 32 位累加器张量
        d: 二进分数 DN(S_acc/S_out)
        k_out: 输出位宽
        out_scale: 输出尺度(由调用方给定)
        rounding: 取整方式
        site: 饱和统计的站点名

    Returns:
        k_out 位整数张量
    """
    if acc.bits > 32:
        raise KernelPreconditionError(f"累加器位宽超过 32: {acc.bits}")
    return requantize_int(acc.data, d, k_out, out_scale, rounding=rounding, site=site)
