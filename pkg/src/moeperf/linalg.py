"""Deterministic dense linear-algebra primitives.

Every dot product in the package runs through :func:`dot_accumulate`:
elementwise products are formed exactly in float64, summed left-to-right
along ascending ``k`` with ``np.add.accumulate``, and rounded to float32
once at the end.  Because the summation order depends only on the shared
inner dimension -- never on how rows or columns are tiled -- a blocked GEMM
and an unblocked one produce bit-identical float32 outputs.  That property
is what lets the grouped/tiled pipeline be compared bitwise against a plain
per-token oracle.

The price is an ``(m, n, K)`` float64 intermediate, so these kernels are
meant for reduced, desk-scale problem sizes; full-scale analysis goes
through the analytical model instead.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteInput, ShapeMismatch

#: Element dtype for all activations and weights.
DTYPE = np.float32


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a C-contiguous 2-D float32 array.

    Raises :class:`ShapeMismatch` if the input is not two-dimensional.
    """
    arr = np.asarray(a, dtype=DTYPE)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def require_finite(arr: np.ndarray, name: str = "input") -> np.ndarray:
    """Raise :class:`NonFiniteInput` if ``arr`` contains NaN or infinity."""
    if arr.size and not np.isfinite(arr).all():
        raise NonFiniteInput(f"{name} contains non-finite values")
    return arr


def dot_accumulate(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Compute ``a @ b`` with a fixed ascending-k summation order.

    ``a`` is ``(m, K)``, ``b`` is ``(K, n)``; the result is ``(m, n)``
    float32.  Products are exact in float64 and folded strictly
    left-to-right, so the result for any output element is independent of
    row/column tiling.
    """
    prods = a.astype(np.float64)[:, None, :] * b.T.astype(np.float64)[None, :, :]
    if prods.shape[-1] == 0:
        return np.zeros(prods.shape[:2], dtype=DTYPE)
    np.add.accumulate(prods, axis=-1, out=prods)
    return prods[..., -1].astype(DTYPE)


def dense_matmul(a, b) -> np.ndarray:
    """Reference float32 matmul with the canonical accumulation order."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(
            f"inner dimensions differ: a is {a.shape}, b is {b.shape}"
        )
    return dot_accumulate(a, b)


def sigmoid(x) -> np.ndarray:
    """Numerically stable logistic function, float32 in and out.

    Uses the split form ``1/(1+e^-x)`` for x >= 0 and ``e^x/(1+e^x)``
    otherwise, so the exponential argument is never positive and the result
    stays finite for magnitudes far beyond float32 overflow territory.
    """
    x = np.asarray(x, dtype=DTYPE)
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t)).astype(DTYPE)


def silu(x) -> np.ndarray:
    """SiLU activation ``x * sigmoid(x)`` in float32."""
    x = np.asarray(x, dtype=DTYPE)
    return (x * sigmoid(x)).astype(DTYPE)
