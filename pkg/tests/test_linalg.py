"""Deterministic accumulation core: order, tiling invariance, activations."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from moeperf.errors import ShapeMismatch
from moeperf.linalg import DTYPE, as_matrix, dense_matmul, dot_accumulate, sigmoid, silu

# Frozen activation values (high-precision reference, rounded to float64).
SILU_ONE = 0.7310585786300049  # 1 / (1 + e^-1)


def _scalar_fold(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Literal left-to-right scalar accumulation, the definitional order."""
    m, kk = a.shape
    n = b.shape[1]
    out = np.empty((m, n), dtype=DTYPE)
    for i in range(m):
        for j in range(n):
            acc = np.float64(0.0)
            for k in range(kk):
                acc = acc + np.float64(a[i, k]) * np.float64(b[k, j])
            out[i, j] = DTYPE(acc)
    return out


def test_dot_accumulate_matches_scalar_fold_bitwise(rng):
    a = rng.standard_normal((5, 17)).astype(DTYPE)
    b = rng.standard_normal((17, 7)).astype(DTYPE)
    assert np.array_equal(dot_accumulate(a, b), _scalar_fold(a, b))


def test_dot_accumulate_tiling_invariance(rng):
    """Row and column slices reproduce the full result bit-for-bit."""
    a = rng.standard_normal((12, 33)).astype(DTYPE)
    b = rng.standard_normal((33, 9)).astype(DTYPE)
    full = dot_accumulate(a, b)
    for m0, m1 in [(0, 3), (3, 12), (5, 6)]:
        assert np.array_equal(dot_accumulate(a[m0:m1], b), full[m0:m1])
    for n0, n1 in [(0, 4), (4, 9), (2, 3)]:
        assert np.array_equal(dot_accumulate(a, b[:, n0:n1]), full[:, n0:n1])


def test_dense_matmul_close_to_float64_reference(rng):
    a = rng.standard_normal((6, 40)).astype(DTYPE)
    b = rng.standard_normal((40, 5)).astype(DTYPE)
    ref = a.astype(np.float64) @ b.astype(np.float64)
    np.testing.assert_allclose(dense_matmul(a, b), ref, rtol=1e-5, atol=1e-6)


def test_dense_matmul_empty_dims():
    assert dense_matmul(np.zeros((0, 4)), np.zeros((4, 3))).shape == (0, 3)
    assert dense_matmul(np.zeros((2, 0)), np.zeros((0, 3))).shape == (2, 3)
    assert np.array_equal(
        dense_matmul(np.zeros((2, 0)), np.zeros((0, 3))), np.zeros((2, 3))
    )


def test_dense_matmul_shape_errors():
    with pytest.raises(ShapeMismatch):
        dense_matmul(np.zeros((2, 3)), np.zeros((4, 2)))
    with pytest.raises(ShapeMismatch):
        as_matrix(np.zeros(3))
    with pytest.raises(ShapeMismatch):
        as_matrix(np.zeros((2, 2, 2)))


def test_sigmoid_frozen_points():
    assert sigmoid(np.array([0.0]))[0] == DTYPE(0.5)
    assert np.isclose(float(silu(np.array([1.0]))[0]), SILU_ONE, rtol=1e-6)
    assert silu(np.array([0.0]))[0] == DTYPE(0.0)


def test_sigmoid_extreme_magnitudes_stay_finite():
    x = np.array([-1e4, -88.0, -20.0, 20.0, 88.0, 1e4], dtype=DTYPE)
    s = sigmoid(x)
    assert np.isfinite(s).all()
    assert s[0] == DTYPE(0.0) and s[-1] == DTYPE(1.0)
    y = silu(x)
    assert np.isfinite(y).all()
    assert y[-1] == DTYPE(1e4)  # x * 1 for large positive x


@given(
    st.integers(min_value=1, max_value=8),
    st.integers(min_value=1, max_value=24),
    st.integers(min_value=1, max_value=8),
    st.integers(min_value=0, max_value=2**32 - 1),
)
def test_dot_accumulate_row_tiling_property(m, k, n, seed):
    gen = np.random.Generator(np.random.PCG64(seed))
    a = gen.standard_normal((m, k)).astype(DTYPE)
    b = gen.standard_normal((k, n)).astype(DTYPE)
    full = dot_accumulate(a, b)
    split = m // 2
    top = dot_accumulate(a[:split], b)
    bottom = dot_accumulate(a[split:], b)
    assert np.array_equal(np.vstack([top, bottom]), full)


@given(st.floats(min_value=-1e4, max_value=1e4, allow_nan=False))
def test_sigmoid_bounds_property(x):
    s = float(sigmoid(np.array([x], dtype=DTYPE))[0])
    assert 0.0 <= s <= 1.0
