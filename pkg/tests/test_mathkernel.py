import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tann.mathkernel import (NumericalError, ShapeError, finite_diff_grad, make_rng, matmul, sigmoid,
                             softmax)


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_identity_and_hand_case():
    A = make_rng(0).normal(size=(3, 4))
    assert np.array_equal(matmul(np.eye(3), A), A)
    assert np.array_equal(matmul([[1, 2], [3, 4]], [[0], [1]]), [[2], [4]])


def test_matmul_matches_triple_loop():
    rng = make_rng(1)
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b), rtol=0, atol=1e-12)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matmul_associative(seed):
    rng = make_rng(seed)
    a, b, c = rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=(3, 6))
    left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
    assert np.max(np.abs(left - right)) <= 1e-9 * max(1.0, np.max(np.abs(left)))


def test_sigmoid_values():
    assert sigmoid(0.0) == 0.5
    assert sigmoid(1.0) == pytest.approx(float(1 / (1 + mpmath.exp(-1))), abs=1e-15)
    assert abs(float(sigmoid(1.0)) - 0.7310585786) < 1e-10
    tiny = sigmoid(-100.0)
    assert 0 < tiny <= 1e-30
    assert np.all(np.isfinite(sigmoid(np.array([-1e3, 1e3]))))


@given(arrays(np.float64, 10, elements=st.floats(-50, 50)))
def test_sigmoid_symmetry(x):
    np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-12)


def test_softmax_cases():
    np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-15)
    big = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(big)) and big[0] == pytest.approx(1.0) and big[1] < 1e-300
    mpmath.mp.dps = 50
    expected = [mpmath.exp(k) / sum(mpmath.exp(j) for j in (1, 2, 3)) for k in (1, 2, 3)]
    np.testing.assert_allclose(softmax([1.0, 2.0, 3.0]), [float(e) for e in expected], rtol=0, atol=1e-12)
    with pytest.raises(ShapeError):
        softmax([])


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-1e3, 1e3)))
def test_softmax_sums_to_one(v):
    p = softmax(v)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-12


def test_finite_diff_grad_simple_functions():
    x = make_rng(2).normal(size=(3, 4))
    np.testing.assert_allclose(finite_diff_grad(np.sum, x), np.ones_like(x), atol=1e-9)
    np.testing.assert_allclose(finite_diff_grad(lambda v: 0.5 * np.sum(v * v), x), x, atol=1e-8)
    with pytest.raises(ValueError):
        finite_diff_grad(np.sum, x, eps=0)
    with pytest.raises(NumericalError):
        finite_diff_grad(lambda v: np.inf, x)


def test_rng_reproducible():
    a = make_rng(123).random(10_000)
    b = make_rng(123).random(10_000)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, make_rng(124).random(10_000))
