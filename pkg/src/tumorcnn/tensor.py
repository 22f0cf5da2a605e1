"""Dense array kernels.

Tensors are plain ``numpy.ndarray`` objects in C (row-major) order. Images use
NHWC layout. Training runs in float32; float64 is reserved for gradient
checks. Broadcasting is limited to a scalar right-hand operand.
"""

from __future__ import annotations

from typing import Callable, Union

import numpy as np

from .errors import DimensionError, DomainError

Tensor = np.ndarray

FLOAT32 = np.float32
FLOAT64 = np.float64

_PRECISIONS = {"f32": FLOAT32, "f64": FLOAT64, "f64-check": FLOAT64}


def dtype_for(precision: str) -> np.dtype:
    try:
        return np.dtype(_PRECISIONS[precision])
    except KeyError:
        raise DomainError(f"unknown precision mode {precision!r}") from None


def tensor(data, dtype=FLOAT32) -> Tensor:
    """Contiguous copy of ``data`` as a tensor of the given float type."""
    return np.array(data, dtype=dtype, order="C")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return np.matmul(a, b)


_BINARY: dict[str, Callable] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op: str, a: Tensor, b: Union[Tensor, float, Callable]) -> Tensor:
    """Apply ``add``/``sub``/``mul``/``scale``/``map`` element by element.

    ``scale`` takes a scalar ``b``; ``map`` takes a unary callable that is
    applied to the whole array (it must be elementwise itself).
    """
    if op == "map":
        if not callable(b):
            raise DomainError("map requires a callable operand")
        out = np.asarray(b(a))
        if out.shape != a.shape:
            raise DimensionError(f"map changed shape {a.shape} -> {out.shape}")
        return out
    if op == "scale":
        if not np.isscalar(b):
            raise DomainError("scale requires a scalar operand")
        return np.multiply(a, a.dtype.type(b))
    try:
        fn = _BINARY[op]
    except KeyError:
        raise DomainError(f"unknown elementwise op {op!r}") from None
    if np.isscalar(b):
        return fn(a, a.dtype.type(b))
    if a.shape != b.shape:
        raise DimensionError(f"elementwise {op} shape mismatch: {a.shape} vs {b.shape}")
    return fn(a, b)


def reduce(op: str, a: Tensor, axis: int | None = None) -> Tensor:
    """Reduce along ``axis`` (all axes when ``None``).

    ``sum`` and ``mean`` accumulate strictly left to right, so the result of a
    full reduction equals a sequential loop over the buffer. ``argmax`` picks
    the lowest index among ties.
    """
    if axis is None:
        flat = a.reshape(-1)
        if flat.size == 0:
            raise DomainError("reduction over an empty tensor")
        return reduce(op, flat, 0)
    if not -a.ndim <= axis < a.ndim:
        raise DomainError(f"axis {axis} invalid for shape {a.shape}")
    if a.shape[axis] == 0:
        raise DomainError(f"reduction over empty axis {axis} of shape {a.shape}")
    if op == "sum":
        return np.take(np.add.accumulate(a, axis=axis), -1, axis=axis)
    if op == "mean":
        total = np.take(np.add.accumulate(a, axis=axis), -1, axis=axis)
        return total / a.dtype.type(a.shape[axis]) if a.dtype.kind == "f" else total / a.shape[axis]
    if op == "max":
        return np.max(a, axis=axis)
    if op == "argmax":
        return np.argmax(a, axis=axis)
    raise DomainError(f"unknown reduction {op!r}")
