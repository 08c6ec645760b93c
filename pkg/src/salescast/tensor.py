"""Dense-tensor substrate: float64 arrays plus the bulk operations layers need.

Tensors are plain numpy float64 ndarrays in row-major (C) order. All
operations here are pure: inputs are never modified and outputs are freshly
allocated. Results are checked for finiteness so NaN/Inf never propagates
silently out of the substrate.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericError, ParameterError

Tensor = np.ndarray


def tensor(data) -> Tensor:
    """Build a float64 tensor from nested lists / arrays."""
    return np.array(data, dtype=np.float64, order="C")


def zeros(shape) -> Tensor:
    return np.zeros(shape, dtype=np.float64)


def ones(shape) -> Tensor:
    return np.ones(shape, dtype=np.float64)


def _check_finite(out: Tensor, op: str) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{op} produced non-finite values")
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard rank-2 matrix product."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    return _check_finite(a @ b, "matmul")


_ZIP_FNS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
}


def map_zip(a: Tensor, b, fn: str) -> Tensor:
    """Elementwise combine `a` with an equal-shaped tensor or a scalar."""
    if fn not in _ZIP_FNS:
        raise ParameterError(f"unknown pointwise function {fn!r}")
    if isinstance(b, np.ndarray) and b.shape != a.shape and b.shape != ():
        raise DimensionError(f"map_zip shape mismatch: {a.shape} vs {b.shape}")
    return _check_finite(_ZIP_FNS[fn](a, b).astype(np.float64), f"map_zip:{fn}")


def add(a, b):
    return map_zip(np.asarray(a, dtype=np.float64), b, "add")


def sub(a, b):
    return map_zip(np.asarray(a, dtype=np.float64), b, "sub")


def mul(a, b):
    return map_zip(np.asarray(a, dtype=np.float64), b, "mul")


_REDUCE_FNS = {"sum": np.sum, "mean": np.mean, "max": np.max}


def reduce(a: Tensor, kind: str, axis=None) -> Tensor:
    """Reduce over one axis (axis removed) or over all elements (scalar)."""
    if kind not in _REDUCE_FNS:
        raise ParameterError(f"unknown reduction {kind!r}")
    if axis is not None and not (-a.ndim <= axis < a.ndim):
        raise DimensionError(f"axis {axis} invalid for rank-{a.ndim} tensor")
    out = _REDUCE_FNS[kind](a, axis=axis)
    return _check_finite(np.asarray(out, dtype=np.float64), f"reduce:{kind}")


class RngStream:
    """Deterministic random stream.

    Backed by numpy's PCG64 generator, whose output stream for a given seed
    is fixed and platform-independent. A stream is single-owner: hand it off,
    never share it. `split()` deterministically derives an independent child
    stream (via SeedSequence spawning), so one root seed fans out into any
    number of reproducible sub-streams.
    """

    def __init__(self, seed: int, _ss: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        self._ss = _ss if _ss is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.PCG64(self._ss))

    def split(self) -> "RngStream":
        child = self._ss.spawn(1)[0]
        return RngStream(self.seed, _ss=child)

    def uniform(self, low: float, high: float, size=None) -> Tensor:
        return np.asarray(self._gen.uniform(low, high, size), dtype=np.float64)

    def normal(self, mean: float = 0.0, std: float = 1.0, size=None) -> Tensor:
        return np.asarray(self._gen.normal(mean, std, size), dtype=np.float64)

    def random(self, size=None) -> Tensor:
        return np.asarray(self._gen.random(size), dtype=np.float64)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int):
        return self._gen.permutation(n)
