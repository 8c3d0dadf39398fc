"""Dense float64 kernels underneath the whole package.

Matrices are plain 2-d float64 numpy arrays in row-major (C) order; vectors
are 1-d float64 arrays.  The kernels are hand-written loops compiled with
numba so that the summation order is fixed (plain ijk accumulation, no FMA
contraction, no blocking): results are bit-identical to a naive Python
triple loop and bit-reproducible across runs.  BLAS is deliberately not
used anywhere.

All public operations are pure: inputs are never mutated.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .errors import DimensionError

__all__ = ["as_matrix", "gemm", "hadamard", "axpy", "map_sigmoid", "map_tanh"]


def as_matrix(a) -> np.ndarray:
    """Coerce to a C-contiguous float64 2-d array; 1-d input becomes a column."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise DimensionError(f"expected 1-d or 2-d array, got ndim={a.ndim}")
    return a


@njit(cache=True)
def _gemm_kernel(a, b, out):
    # Fixed i,k,j loop order; per output element the k-sum is strictly
    # sequential, matching a naive triple loop bit-for-bit.
    rows, inner = a.shape
    cols = b.shape[1]
    for i in range(rows):
        for k in range(inner):
            aik = a[i, k]
            for j in range(cols):
                out[i, j] += aik * b[k, j]


@njit(cache=True)
def _hadamard_kernel(a, b, out):
    for i in range(a.size):
        out[i] = a[i] * b[i]


@njit(cache=True)
def _axpy_kernel(alpha, x, y, out):
    for i in range(x.size):
        out[i] = y[i] + alpha * x[i]


@njit(cache=True)
def _sigmoid_kernel(a, out):
    # Overflow-safe split: exp is only ever taken of a non-positive value.
    for i in range(a.size):
        x = a[i]
        if x >= 0.0:
            out[i] = 1.0 / (1.0 + np.exp(-x))
        else:
            e = np.exp(x)
            out[i] = e / (1.0 + e)


@njit(cache=True)
def _tanh_kernel(a, out):
    for i in range(a.size):
        out[i] = np.tanh(a[i])


def _check_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def gemm(a, b, accumulate_into=None) -> np.ndarray:
    """Return ``accumulate_into + a @ b`` (zeros if no accumulator is given)."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"gemm: inner dimensions differ, {a.shape} vs {b.shape}")
    if accumulate_into is None:
        out = np.zeros((a.shape[0], b.shape[1]))
    else:
        out = as_matrix(accumulate_into)
        if out.shape != (a.shape[0], b.shape[1]):
            raise DimensionError(
                f"gemm: accumulator shape {out.shape} does not match "
                f"product shape {(a.shape[0], b.shape[1])}"
            )
        out = out.copy()
    _gemm_kernel(a, b, out)
    return out


def hadamard(a, b) -> np.ndarray:
    """Elementwise product of two equally shaped arrays."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    _check_same_shape(a, b, "hadamard")
    out = np.empty_like(a)
    _hadamard_kernel(a.ravel(), b.ravel(), out.ravel())
    return out


def axpy(alpha: float, x, y) -> np.ndarray:
    """Return ``y + alpha * x``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    _check_same_shape(x, y, "axpy")
    out = np.empty_like(x)
    _axpy_kernel(float(alpha), x.ravel(), y.ravel(), out.ravel())
    return out


def map_sigmoid(a) -> np.ndarray:
    """Elementwise logistic function, overflow-safe, outputs in (0, 1)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    out = np.empty_like(a)
    _sigmoid_kernel(a.ravel(), out.ravel())
    return out


def map_tanh(a) -> np.ndarray:
    """Elementwise hyperbolic tangent, outputs in (-1, 1)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    out = np.empty_like(a)
    _tanh_kernel(a.ravel(), out.ravel())
    return out
