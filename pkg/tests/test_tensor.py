import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from tumorcnn.errors import DimensionError, DomainError
from tumorcnn.tensor import dtype_for, elementwise, matmul, reduce, tensor


def test_matmul_examples():
    a = tensor([[1, 2], [3, 4]])
    np.testing.assert_array_equal(matmul(np.eye(2, dtype=np.float32), a), a)
    np.testing.assert_array_equal(matmul(a, np.zeros((2, 2), np.float32)), np.zeros((2, 2)))
    np.testing.assert_array_equal(matmul(a, tensor([[5, 6], [7, 8]])), [[19, 22], [43, 50]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_elementwise_examples():
    np.testing.assert_array_equal(elementwise("add", tensor([1, 2]), tensor([0, 0])), [1, 2])
    np.testing.assert_array_equal(elementwise("scale", tensor([1, -2]), 0.5), [0.5, -1])
    np.testing.assert_array_equal(elementwise("mul", tensor([2, 3]), tensor([4, 5])), [8, 15])
    np.testing.assert_array_equal(elementwise("sub", tensor([2, 3]), 1.0), [1, 2])
    np.testing.assert_array_equal(elementwise("map", tensor([1, 4]), np.sqrt), [1, 2])


def test_elementwise_rejects_broadcast():
    with pytest.raises(DimensionError):
        elementwise("add", np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(DomainError):
        elementwise("pow", np.zeros(2), np.zeros(2))


def test_reduce_examples():
    assert reduce("sum", tensor([1, 2, 3])) == 6
    assert reduce("argmax", tensor([0.1, 0.7, 0.1, 0.1])) == 1
    assert reduce("argmax", tensor([0.5, 0.5])) == 0
    assert reduce("mean", tensor([1, 2, 3])) == 2
    np.testing.assert_array_equal(reduce("max", tensor([[1, 5], [3, 2]]), axis=0), [3, 5])


def test_reduce_errors():
    with pytest.raises(DomainError):
        reduce("sum", np.zeros((0,)))
    with pytest.raises(DomainError):
        reduce("sum", np.zeros((2, 2)), axis=2)


def test_dtype_modes():
    assert dtype_for("f32") == np.float32
    assert dtype_for("f64-check") == np.float64
    with pytest.raises(DomainError):
        dtype_for("f16")


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=3, max_side=12),
                  elements=st.floats(-1e3, 1e3, width=32)))
def test_full_sum_is_sequential(a):
    expected = np.float32(0)
    for v in a.reshape(-1):
        expected = np.float32(expected + v)
    assert reduce("sum", a) == expected


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_matmul_identity_and_linearity(m, k, n, seed):
    g = np.random.default_rng(seed)
    a = g.standard_normal((m, k))
    np.testing.assert_array_equal(matmul(a, np.eye(k)), a)
    b, c = g.standard_normal((k, n)), g.standard_normal((k, n))
    lhs = matmul(a, b + c)
    rhs = matmul(a, b) + matmul(a, c)
    scale = np.abs(a) @ (np.abs(b) + np.abs(c))
    assert np.all(np.abs(lhs - rhs) <= 1e-12 * np.maximum(scale, 1e-300))
    a32, b32, c32 = (x.astype(np.float32) for x in (a, b, c))
    lhs32 = matmul(a32, b32 + c32)
    rhs32 = matmul(a32, b32) + matmul(a32, c32)
    assert np.all(np.abs(lhs32 - rhs32) <= 1e-6 * np.maximum(scale, 1e-30))
