"""
确定性随机数生成

splitmix64 是计数器型生成器：第 i 次输出只依赖 seed + i·γ，
因此批量生成可以完全向量化，并与逐个调用 rng_next_u64 的结果逐位一致。
"""

import math
from typing import Sequence

import numpy as np

from ..models.tensor_models import FpTensor
from .error_handler import InvalidArgumentError
from ..utils.logger import get_logger

logger = get_logger("rng")

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_1 = 0xBF58476D1CE4E5B9
MIX_2 = 0x94D049BB133111EB
UNIT_53 = 2.0 ** -53


class Rng:
    """splitmix64 状态，单一所有者，不跨线程共享"""

    def __init__(self, seed: int = 0):
        self.state = int(seed) & MASK64

    def next_u64_array(self, count: int) -> np.ndarray:
        """
        批量生成 count 个 64 位无符号数

        Args:
            count: 个数

        Returns:
            uint64 数组，与连续调用 rng_next_u64 的结果相同
        """
        if count < 0:
            raise InvalidArgumentError(f"生成个数不能为负: {count}")
        steps = np.arange(1, count + 1, dtype=np.uint64)
        with np.errstate(over='ignore'):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX_1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX_2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + count * GOLDEN_GAMMA) & MASK64
        return z

    def uniform(self, count: int) -> np.ndarray:
        """[0, 1) 上的 53 位均匀浮点数"""
        return (self.next_u64_array(count) >> np.uint64(11)).astype(np.float64) * UNIT_53

    def integers(self, low: int, high: int, count: int) -> np.ndarray:
        """[low, high] 闭区间上的整数(取模映射，偏差可忽略)"""
        if high < low:
            raise InvalidArgumentError(f"整数区间为空: [{low}, {high}]")
        span = np.uint64(high - low + 1)
        return (self.next_u64_array(count) % span).astype(np.int64) + np.int64(low)


def rng_next_u64(rng: Rng) -> int:
    """推进一步 splitmix64 并返回 64 位输出"""
    rng.state = (rng.state + GOLDEN_GAMMA) & MASK64
    z = rng.state
    z = ((z ^ (z >> 30)) * MIX_1) & MASK64
    z = ((z ^ (z >> 27)) * MIX_2) & MASK64
    return z ^ (z >> 31)


def _check_dims(dims: Sequence[int]) -> int:
    if len(dims) == 0 or any(int(extent) <= 0 for extent in dims):
        raise InvalidArgumentError(f"维度必须为正: {list(dims)}")
    return math.prod(int(extent) for extent in dims)


def gen_gaussian(rng: Rng, dims: Sequence[int], mean: float = 0.0, std: float = 1.0) -> FpTensor:
    """
    Box-Muller 生成高斯张量

    两个均匀数都取 (u64 >> 11)·2^-53；半径使用 1-u1 避免 log(0)。
    每对均匀数产生两个样本(cos、sin 分支交错排列)。

    Args:
        rng: 随机数生成器
        dims: 张量维度
        mean: 均值
        std: 标准差(>= 0)

    Returns:
        浮点张量
    """
    if std < 0:
        raise InvalidArgumentError(f"标准差不能为负: {std}")
    count = _check_dims(dims)
    pairs = (count + 1) // 2

    u = rng.uniform(2 * pairs)
    u1, u2 = u[0::2], u[1::2]
    radius = np.sqrt(-2.0 * np.log1p(-u1))
    angle = 2.0 * np.pi * u2

    samples = np.empty(2 * pairs, dtype=np.float64)
    samples[0::2] = radius * np.cos(angle)
    samples[1::2] = radius * np.sin(angle)

    values = mean + std * samples[:count]
    logger.debug(f"生成高斯张量: dims={list(dims)}, mean={mean}, std={std}")
    return FpTensor(data=values.reshape(tuple(int(extent) for extent in dims)))
