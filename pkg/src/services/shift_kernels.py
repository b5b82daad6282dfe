"""
非线性整数算子: Shiftmax、ShiftGELU、I-LayerNorm

逐行算子都沿最后一个维度计算；其余维度视为行的批。
"""

from typing import Optional

import numpy as np

from ..models.tensor_models import QTensor
from ..models.quant_models import IntMathConfig, DyadicScale, RequantRounding
from ..models.vit_models import LayerNormParams
from .error_handler import KernelPreconditionError, InvalidArgumentError
from .int_math import (
    exp_unit, shift_exp_int, int_div, int_div_quotient, int_div_unit_scale, int_isqrt, round_div,
)
from .integer_audit import guard_real_arithmetic
from .quantizer import requantize_int
from ..utils.logger import get_logger

logger = get_logger("shift_kernels")

SUM_LIMIT = 1 << 31


def gelu_offset_cap(i0: int, N: int) -> int:
    """
    ShiftGELU 稳定偏移的上限: ShiftExp(-cap) 仍不小于 1 的最大偏移

    1.4375 = 23/16 为移位实现的 log2(e) 近似。
    """
    return (N * i0 * 16) // 23


def shiftmax(x: QTensor, k_out: int, cfg: IntMathConfig, i0: Optional[int] = None,
             out_scale: Optional[float] = None, site: str = "shiftmax") -> QTensor:
    """
    Shiftmax: 整数 Softmax

    每行: I_Δ = I - max(I)；ShiftExp；I_out_i = IntDiv(I_exp_i, Σ_j I_exp_j, k_out)

    Args:
        x: 8 或 16 位输入，最后一维为行
        k_out: 输出位宽
        cfg: 整数算子配置
        i0: 预先计算的 round(1/S)，给定时全程整数
        out_scale: 预先计算的输出尺度 1/2^(k_out-1)
        site: 饱和统计的站点名

    Returns:
        尺度 1/2^(k_out-1) 的整数张量，元素在 [0, 2^(k_out-1)-1]
    """
    if x.bits > 16:
        raise KernelPreconditionError(f"Shiftmax 输入必须不超过 16 位: {x.bits}")
    if i0 is None:
        i0 = exp_unit(x.scale)

    delta = x.data - x.data.max(axis=-1, keepdims=True)
    exp_int = shift_exp_int(delta, i0, cfg.N)
    exp_sum = exp_int.sum(axis=-1, keepdims=True)
    if exp_sum.size and int(exp_sum.max()) >= SUM_LIMIT:
        raise KernelPreconditionError(
            f"{site}: 行内 ΣI_exp 超过 2^31 (I_0={i0}, N={cfg.N}, d={x.dims[-1]})")

    out, out_scale = int_div(exp_int, exp_sum, k_out, cfg, site=site, out_scale=out_scale)
    return QTensor(data=out, scale=out_scale, bits=k_out)


def shift_gelu(x: QTensor, k_out: int, cfg: IntMathConfig, i0: Optional[int] = None,
               offset_cap: Optional[int] = None,
               out_requant: Optional[DyadicScale] = None,
               out_scale: Optional[float] = None,
               out_bits: int = 8,
               rounding: RequantRounding = RequantRounding.NEAREST,
               site: str = "shift_gelu") -> QTensor:
    """
    ShiftGELU: GELU(x) ≈ x·σ(1.702x)

    I_p = I + (I>>1) + (I>>3) + (I>>4)         以 (1.1011)_b 近似 1.702
    偏移 m = min(max(max(I_p), 0), cap)，I_Δ = min(I_p - m, 0)
    σ ≈ IntDiv(ShiftExp(I_Δ), ShiftExp(I_Δ) + ShiftExp(-m), k_out)
    输出 I·I_σ，尺度 S·S_σ(16 位)；给定 out_requant 时再重量化到 out_bits 位。

    Args:
        x: 8 位输入
        k_out: σ 估计的位宽
        cfg: 整数算子配置
        i0: 预先计算的 round(1/S)
        offset_cap: 预先计算的偏移上限，默认 gelu_offset_cap(i0, N)
        out_requant: DN(S·S_σ/S_out)
        out_scale: 重量化后的输出尺度
        out_bits: 重量化后的位宽
    """
    if x.bits > 8:
        raise KernelPreconditionError(f"ShiftGELU 输入必须为 8 位: {x.bits}")
    if k_out > 8:
        raise InvalidArgumentError(f"ShiftGELU σ 位宽不能超过 8: {k_out}")
    if (out_requant is None) != (out_scale is None):
        raise InvalidArgumentError("out_requant 与 out_scale 必须同时给出")
    if i0 is None:
        i0 = exp_unit(x.scale)
    if offset_cap is None:
        offset_cap = gelu_offset_cap(i0, cfg.N)

    I = x.data
    I_p = I + np.right_shift(I, 1) + np.right_shift(I, 3) + np.right_shift(I, 4)
    offset = min(max(int(I_p.max()), 0), offset_cap)
    delta = np.minimum(I_p - offset, 0)

    numerator = shift_exp_int(delta, i0, cfg.N)
    denominator_extra = int(shift_exp_int(np.int64(-offset), i0, cfg.N))
    sigmoid = int_div_quotient(numerator, numerator + denominator_extra, k_out, cfg, site=site)

    product = I * sigmoid
    if out_requant is None:
        guard_real_arithmetic("shift_gelu.scale")
        return QTensor(data=product, scale=x.scale * int_div_unit_scale(k_out), bits=16)
    return requantize_int(product, out_requant, out_bits, out_scale, rounding=rounding, site=site)


def i_layernorm(x: QTensor, params: LayerNormParams, k_out: Optional[int] = None,
                cfg: Optional[IntMathConfig] = None,
                rounding: RequantRounding = RequantRounding.NEAREST) -> QTensor:
    """
    I-LayerNorm: 整数均值、方差，整数迭代开方求标准差

    每行: μ = round(mean(I))；Var = floor(mean((I-μ)^2))；std = max(isqrt(Var), 1)；
    n_i = round((I_i-μ)·2^p / std)(尺度 2^-p，输入尺度在比值中抵消)；
    输出 requantize(n_i·I_γ + I_β)。

    Args:
        x: 8 位输入，最后一维为隐藏维
        params: γ、β 及输出重量化参数
        k_out: 输出位宽，默认 params.out_bits
        cfg: 整数算子配置(开方迭代次数)
    """
    cfg = cfg or IntMathConfig()
    if x.bits > 8:
        raise KernelPreconditionError(f"{params.site}: I-LayerNorm 输入必须为 8 位: {x.bits}")
    width = x.dims[-1]
    if width < 2:
        raise InvalidArgumentError(f"{params.site}: 行长度必须 >= 2")
    if params.gamma.dims != (width,):
        raise InvalidArgumentError(f"{params.site}: γ 长度 {params.gamma.dims} 与行长度 {width} 不一致")

    I = x.data
    mean = round_div(I.sum(axis=-1, keepdims=True), width)
    centered = I - mean
    variance = np.floor_divide((centered * centered).sum(axis=-1, keepdims=True), width)
    std = np.maximum(int_isqrt(variance, cfg), 1)

    normalized = round_div(np.left_shift(centered, params.p), std)
    acc = normalized * params.gamma.data + params.beta.data
    if acc.size and int(np.max(np.abs(acc))) > (1 << 31) - 1:
        raise KernelPreconditionError(f"{params.site}: 仿射累加超出 32 位")

    return requantize_int(acc, params.out_requant, k_out or params.out_bits, params.out_scale,
                          rounding=rounding, site=params.site)
