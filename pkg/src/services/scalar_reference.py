"""
逐元素的标量参考实现(Python 整数)

与向量化算子逐位对照；只使用 Python 整数的移位、整除和比较。
"""

from typing import List, Optional, Sequence


def shift_exp_scalar(I: int, i0: int, N: int) -> int:
    I_p = I + (I >> 1) - (I >> 4)
    q = I_p // (-i0)
    r = -(I_p + q * i0)
    I_b = ((-r) >> 1) + i0
    if q <= N:
        return I_b << (N - q)
    return I_b >> (q - N)


def int_div_scalar(I1: int, I2: int, k_out: int, M: int) -> int:
    quotient = (((1 << M) // I2) * I1) >> (M - (k_out - 1))
    return min(quotient, (1 << (k_out - 1)) - 1)


def shiftmax_scalar(row: Sequence[int], i0: int, k_out: int, N: int, M: int) -> List[int]:
    top = max(row)
    exps = [shift_exp_scalar(value - top, i0, N) for value in row]
    total = sum(exps)
    return [int_div_scalar(e, total, k_out, M) for e in exps]


def gelu_offset_cap_scalar(i0: int, N: int) -> int:
    return (N * i0 * 16) // 23


def shift_gelu_scalar(values: Sequence[int], i0: int, k_out: int, N: int, M: int,
                      offset_cap: Optional[int] = None) -> List[int]:
    """返回 I·I_σ(尺度 S/2^(k_out-1))"""
    cap = gelu_offset_cap_scalar(i0, N) if offset_cap is None else offset_cap
    I_p = [v + (v >> 1) + (v >> 3) + (v >> 4) for v in values]
    offset = min(max(max(I_p), 0), cap)
    extra = shift_exp_scalar(-offset, i0, N)
    out = []
    for value, scaled in zip(values, I_p):
        num = shift_exp_scalar(min(scaled - offset, 0), i0, N)
        out.append(value * int_div_scalar(num, num + extra, k_out, M))
    return out


def isqrt_scalar(v: int, iters: int) -> int:
    if v == 0:
        return 0
    root = 1 << (v.bit_length() // 2)
    for _ in range(iters):
        root = (root + v // root) >> 1
    return root
