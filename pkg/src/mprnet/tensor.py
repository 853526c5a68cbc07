"""Shape-checked primitives over dense float64 arrays.

Series tensors use the ``(time, channel)`` layout; an optional leading batch
axis is allowed everywhere.  Storage is a C-contiguous ``numpy.ndarray``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

DTYPE = np.float64


class ShapeMismatch(ValueError):
    pass


class DivisionByZero(ZeroDivisionError):
    pass


class InvalidAxis(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


def as_tensor(x) -> np.ndarray:
    """Copy ``x`` into a float64 array and validate the extents."""
    arr = np.array(x, dtype=DTYPE)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if any(n < 1 for n in arr.shape):
        raise ShapeMismatch(f"all extents must be >= 1, got {arr.shape}")
    return arr


def _broadcastable(a_shape, b_shape) -> bool:
    # b must broadcast onto a without changing a's shape
    if len(b_shape) > len(a_shape):
        return False
    for sa, sb in zip(reversed(a_shape), reversed(b_shape)):
        if sb != sa and sb != 1:
            return False
    return True


def elementwise_binary(a, b, op: str) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeMismatch(f"cannot broadcast {b.shape} onto {a.shape}")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        if np.any(b == 0):
            raise DivisionByZero("divisor contains zero")
        return a / b
    raise ValueError(f"unknown op {op!r}")


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul {a.shape} x {b.shape}")
    return a @ b


def _check_axis(t: np.ndarray, axis: int) -> int:
    if not -t.ndim <= axis < t.ndim:
        raise InvalidAxis(f"axis {axis} for rank {t.ndim}")
    return axis % t.ndim


def reduce(t, axis: int, op: str, keepdims: bool = False) -> np.ndarray:
    """Sum, mean or population std (divide by count) along ``axis``."""
    t = np.asarray(t, dtype=DTYPE)
    axis = _check_axis(t, axis)
    if op == "sum":
        return t.sum(axis=axis, keepdims=keepdims)
    if op == "mean":
        return t.mean(axis=axis, keepdims=keepdims)
    if op == "std":
        return t.std(axis=axis, keepdims=keepdims)
    raise ValueError(f"unknown op {op!r}")


def slice_time(t, start: int, stop: int) -> np.ndarray:
    t = np.asarray(t, dtype=DTYPE)
    length = t.shape[-2]
    if not 0 <= start < stop <= length:
        raise IndexOutOfRange(f"slice [{start}:{stop}) of length {length}")
    return t[..., start:stop, :].copy()


def concat_time(parts: Sequence) -> np.ndarray:
    parts = [np.asarray(p, dtype=DTYPE) for p in parts]
    if not parts:
        raise ShapeMismatch("nothing to concatenate")
    lead = parts[0].shape[:-2] + parts[0].shape[-1:]
    for p in parts[1:]:
        if p.shape[:-2] + p.shape[-1:] != lead:
            raise ShapeMismatch(f"channel extents differ: {p.shape} vs {parts[0].shape}")
    return np.concatenate(parts, axis=-2)
