"""
整数推理审计

在 integer_only() 上下文内，任何对数据或尺度做实数运算的函数(量化、反量化、
校准、二进分数转换、由实数尺度推导 I_0)都会抛出 IntegerOnlyViolation。
状态存放在 contextvars 中，线程池任务需通过 copy_context().run 继承。
"""

import contextvars
from contextlib import contextmanager
from typing import Any, Iterator

import numpy as np
from pydantic import BaseModel

from .error_handler import IntegerOnlyViolation

_audit_active: contextvars.ContextVar[bool] = contextvars.ContextVar(
    "integer_only_audit", default=False)


@contextmanager
def integer_only(enabled: bool = True) -> Iterator[None]:
    """开启整数推理审计"""
    token = _audit_active.set(enabled)
    try:
        yield
    finally:
        _audit_active.reset(token)


def audit_active() -> bool:
    return _audit_active.get()


def guard_real_arithmetic(op: str):
    """实数运算入口检查"""
    if _audit_active.get():
        raise IntegerOnlyViolation(f"整数推理期间调用了实数运算: {op}")


def _audited(op: str):
    real = getattr(float, op)

    def method(self, *args):
        guard_real_arithmetic(f"scale {op}")
        return real(self, *args)

    method.__name__ = op
    return method


AUDITED_OPS = ('__add__', '__radd__', '__sub__', '__rsub__', '__mul__', '__rmul__',
               '__truediv__', '__rtruediv__', '__floordiv__', '__rfloordiv__',
               '__mod__', '__rmod__', '__pow__', '__rpow__', '__neg__', '__abs__')


class AuditedScale(float):
    """
    受审计的实数尺度: 在 integer_only() 内对它做任何算术都会抛出 IntegerOnlyViolation

    比较、哈希和转换不受限制；审计之外行为与 float 相同，运算结果为普通 float。
    """

    def __repr__(self) -> str:
        return f"AuditedScale({float.__repr__(self)})"


for _op in AUDITED_OPS:
    setattr(AuditedScale, _op, _audited(_op))


def audit_scales(value: Any) -> Any:
    """
    把模型(及其嵌套的 pydantic 对象、列表)中的全部实数字段替换为 AuditedScale

    用于检查整数推理路径只复制、比较构建时存储的尺度，而不在运行时计算新尺度。
    """
    if isinstance(value, BaseModel):
        updates = {name: audit_scales(getattr(value, name)) for name in type(value).model_fields}
        return value.model_copy(update=updates)
    if isinstance(value, list):
        return [audit_scales(item) for item in value]
    if isinstance(value, tuple):
        return tuple(audit_scales(item) for item in value)
    if isinstance(value, dict):
        return {key: audit_scales(item) for key, item in value.items()}
    if isinstance(value, float) and not isinstance(value, (AuditedScale, np.floating)):
        return AuditedScale(value)
    return value
