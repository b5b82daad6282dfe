"""
线性整数算子: 二进分数流水线的 MatMul / Dense、尺度对齐的残差相加、im2col
"""

from typing import Optional

import numpy as np

from ..models.tensor_models import QTensor
from ..models.quant_models import DyadicScale, RequantRounding
from ..models.vit_models import DenseWeights
from .error_handler import ShapeMismatchError, KernelPreconditionError, InvalidArgumentError
from .integer_audit import guard_real_arithmetic
from .quantizer import dyadic_for, requantize_int, rescale_int, clamp_symmetric
from .saturation_tracker import saturation_tracker
from ..utils.logger import get_logger

logger = get_logger("int_kernels")

# 8 位乘积累加长度上限，保证累加器不超过 32 位
MAX_ACCUMULATION = 1 << 15
INT32_LIMIT = (1 << 31) - 1


def _check_int8_inputs(*tensors: QTensor):
    for tensor in tensors:
        if tensor.bits > 8:
            raise KernelPreconditionError(f"线性算子输入必须为 8 位，得到 {tensor.bits} 位")


def _check_accumulator(acc: np.ndarray, site: str):
    if acc.size and int(np.max(np.abs(acc))) > INT32_LIMIT:
        raise KernelPreconditionError(f"{site}: 累加器超出 32 位")


def im2col(image: np.ndarray, patch_size: int) -> np.ndarray:
    """
    不重叠图像块展开 (C, H, W) -> (num_patches, C·p·p)

    图像块按行优先排列，块内特征顺序为 (c, i, j)。整数和浮点数组通用。
    """
    if image.ndim != 3:
        raise ShapeMismatchError(f"图像必须是 (C, H, W)，得到 {image.shape}")
    channels, height, width = image.shape
    if height % patch_size or width % patch_size:
        raise ShapeMismatchError(f"图像尺寸 {height}x{width} 不能被 patch {patch_size} 整除")
    grid_h, grid_w = height // patch_size, width // patch_size
    blocks = image.reshape(channels, grid_h, patch_size, grid_w, patch_size)
    return blocks.transpose(1, 3, 0, 2, 4).reshape(grid_h * grid_w, channels * patch_size ** 2)


def int_matmul(Q: QTensor, K: QTensor, S_out: float, k_out: int,
               requant: Optional[DyadicScale] = None,
               rounding: RequantRounding = RequantRounding.NEAREST,
               site: str = "int_matmul") -> QTensor:
    """
    整数矩阵乘 I_Q·I_K^T，32 位累加后用 DN(S_Q·S_K/S_out) 重量化

    Args:
        Q: (..., n, d) 8 位输入
        K: (..., m, d) 8 位输入
        S_out: 输出尺度
        k_out: 输出位宽
        requant: 预先计算的二进分数(整数推理路径必须给出)
        rounding: 重量化取整方式
        site: 饱和统计的站点名

    Returns:
        (..., n, m) 的 k_out 位整数张量
    """
    _check_int8_inputs(Q, K)
    if Q.dims[-1] != K.dims[-1]:
        raise ShapeMismatchError(f"{site}: 内维不一致 {Q.dims} vs {K.dims}")
    if Q.dims[-1] > MAX_ACCUMULATION:
        raise KernelPreconditionError(f"{site}: 累加长度 {Q.dims[-1]} 超过 2^15")

    acc = np.matmul(Q.data, np.swapaxes(K.data, -1, -2))
    _check_accumulator(acc, site)
    if requant is None:
        guard_real_arithmetic("int_matmul.requant")
        requant = dyadic_for(Q.scale * K.scale / S_out)
    return requantize_int(acc, requant, k_out, S_out, rounding=rounding, site=site)


def int_dense(x: QTensor, w: DenseWeights, k_out: Optional[int] = None,
              rounding: RequantRounding = RequantRounding.NEAREST) -> QTensor:
    """
    整数全连接 x·W^T + bias，32 位累加后按 w.out_requant 重量化

    w.out_requant 为空时直接返回 32 位累加器(尺度 S_in·S_W，不钳位)。

    Args:
        x: (..., in) 8 位输入
        w: 全连接权重
        k_out: 输出位宽，默认使用 w.out_bits
        rounding: 重量化取整方式
    """
    _check_int8_inputs(x)
    if x.dims[-1] != w.weight.dims[1]:
        raise ShapeMismatchError(
            f"{w.site}: 输入维度 {x.dims[-1]} 与权重输入维度 {w.weight.dims[1]} 不一致")
    if x.dims[-1] > MAX_ACCUMULATION:
        raise KernelPreconditionError(f"{w.site}: 累加长度超过 2^15")
    if x.scale != w.in_scale:
        raise InvalidArgumentError(f"{w.site}: 输入尺度 {x.scale} 与构建时尺度 {w.in_scale} 不一致")

    acc = np.matmul(x.data, w.weight.data.T) + w.bias.data
    _check_accumulator(acc, w.site)
    if w.out_requant is None:
        return QTensor(data=acc, scale=w.acc_scale, bits=32)
    return requantize_int(acc, w.out_requant, k_out or w.out_bits, w.out_scale,
                          rounding=rounding, site=w.site)


def residual_add(a: QTensor, b: QTensor, S_out: float, k_out: int,
                 a_requant: Optional[DyadicScale] = None,
                 b_requant: Optional[DyadicScale] = None,
                 rounding: RequantRounding = RequantRounding.NEAREST,
                 site: str = "residual_add") -> QTensor:
    """
    残差相加: 两个操作数各自重缩放到 S_out，32 位相加后钳位到 k_out 位

    Args:
        a, b: 形状相同的整数张量
        S_out: 输出尺度
        k_out: 输出位宽
        a_requant, b_requant: 预先计算的 DN(S_a/S_out)、DN(S_b/S_out)
    """
    if a.dims != b.dims:
        raise ShapeMismatchError(f"{site}: 残差形状不一致 {a.dims} vs {b.dims}")
    if a_requant is None or b_requant is None:
        guard_real_arithmetic("residual_add.requant")
    if a_requant is None:
        a_requant = dyadic_for(a.scale / S_out)
    if b_requant is None:
        b_requant = dyadic_for(b.scale / S_out)

    total = rescale_int(a.data, a_requant, rounding) + rescale_int(b.data, b_requant, rounding)
    out, clamped = clamp_symmetric(total, k_out)
    saturation_tracker.record(site, clamped, out.size)
    return QTensor(data=out, scale=S_out, bits=k_out)
