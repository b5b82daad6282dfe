"""
ITNS 张量文件读写

格式(小端): magic "ITNS" | version u16=1 | dtype u8 (0=fp64, 1=带尺度整数) | bits u8 |
rank u8 | dims u32×rank | scale f64 (仅 dtype=1) | payload (fp64 或 i64)
"""

import math
import struct
from pathlib import Path
from typing import Union

import numpy as np

from ..models.tensor_models import FpTensor, QTensor
from .error_handler import TensorFormatError, TensorCorruptionError, InvalidArgumentError
from ..utils.logger import get_logger

logger = get_logger("tensor_io")

MAGIC = b"ITNS"
VERSION = 1
DTYPE_FP64 = 0
DTYPE_INT = 1
_HEADER = struct.Struct("<4sHBBB")

Tensor = Union[FpTensor, QTensor]


def tensor_to_bytes(tensor: Tensor) -> bytes:
    """
    序列化张量为 ITNS 字节串

    Args:
        tensor: 浮点或整数张量

    Returns:
        ITNS 编码
    """
    dims = tensor.dims
    if len(dims) > 255:
        raise InvalidArgumentError(f"张量秩过大: {len(dims)}")
    if isinstance(tensor, QTensor):
        header = _HEADER.pack(MAGIC, VERSION, DTYPE_INT, tensor.bits, len(dims))
        header += struct.pack(f"<{len(dims)}I", *dims)
        header += struct.pack("<d", tensor.scale)
        payload = tensor.data.astype("<i8").tobytes()
    else:
        header = _HEADER.pack(MAGIC, VERSION, DTYPE_FP64, 64, len(dims))
        header += struct.pack(f"<{len(dims)}I", *dims)
        payload = tensor.data.astype("<f8").tobytes()
    return header + payload


def tensor_from_bytes(blob: bytes) -> Tensor:
    """
    从 ITNS 字节串解析张量

    Raises:
        TensorFormatError: 魔数、版本、dtype 或位宽非法
        TensorCorruptionError: 头部截断或数据长度与维度不符
    """
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise TensorFormatError(f"魔数错误: {blob[:4]!r}")
    if len(blob) < _HEADER.size:
        raise TensorCorruptionError("文件头被截断")

    _, version, dtype, bits, rank = _HEADER.unpack_from(blob, 0)
    if version != VERSION:
        raise TensorFormatError(f"不支持的版本: {version}")
    if dtype not in (DTYPE_FP64, DTYPE_INT):
        raise TensorFormatError(f"未知 dtype: {dtype}")
    if dtype == DTYPE_FP64 and bits != 64:
        raise TensorFormatError(f"浮点张量位宽必须为 64: {bits}")

    offset = _HEADER.size
    dims_size = 4 * rank
    if len(blob) < offset + dims_size:
        raise TensorCorruptionError("维度字段被截断")
    dims = struct.unpack_from(f"<{rank}I", blob, offset)
    offset += dims_size

    scale = None
    if dtype == DTYPE_INT:
        if len(blob) < offset + 8:
            raise TensorCorruptionError("尺度字段被截断")
        (scale,) = struct.unpack_from("<d", blob, offset)
        offset += 8

    count = math.prod(dims)
    payload = blob[offset:]
    if len(payload) != 8 * count:
        raise TensorCorruptionError(
            f"数据长度与维度不符: 期望 {8 * count} 字节，实际 {len(payload)} 字节")

    try:
        if dtype == DTYPE_INT:
            data = np.frombuffer(payload, dtype="<i8").astype(np.int64).reshape(dims)
            return QTensor(data=data, scale=scale, bits=bits)
        data = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
        return FpTensor(data=data)
    except InvalidArgumentError as e:
        raise TensorCorruptionError(f"张量内容不满足约束: {e}") from e


def write_tensor(path: Union[str, Path], tensor: Tensor):
    """写 ITNS 文件"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = tensor_to_bytes(tensor)
    with open(path, 'wb') as f:
        f.write(blob)
    logger.debug(f"张量写入成功: {path} ({len(blob)} bytes)")


def read_tensor(path: Union[str, Path]) -> Tensor:
    """读 ITNS 文件"""
    path = Path(path)
    if not path.exists():
        raise InvalidArgumentError(f"张量文件不存在: {path}")
    with open(path, 'rb') as f:
        blob = f.read()
    logger.debug(f"张量读取成功: {path} ({len(blob)} bytes)")
    return tensor_from_bytes(blob)
