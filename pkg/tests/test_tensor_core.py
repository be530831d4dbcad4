import math

import numpy as np
import pytest

from hem.errors import ShapeError
from hem.tensor_core import cosine, matmul, softmax_rows, spatial_mean


def _triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_identity():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(np.eye(2), m), m)


def test_matmul_hand_computed():
    assert matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))[0, 0] == 11.0


def test_matmul_matches_triple_loop(rng):
    for _ in range(20):
        a = rng.standard_normal((5, 7))
        b = rng.standard_normal((7, 3))
        np.testing.assert_allclose(matmul(a, b), _triple_loop(a, b), rtol=0, atol=1e-12)


def test_matmul_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match="2x3 by 2x2"):
        matmul(np.zeros((2, 3)), np.zeros((2, 2)))


@pytest.mark.parametrize(
    "row, expected",
    [
        ([0.0, 0.0], [0.5, 0.5]),
        ([1000.0, 1000.0, 1000.0], [1 / 3, 1 / 3, 1 / 3]),
        ([0.0, math.log(3.0)], [0.25, 0.75]),
    ],
)
def test_softmax_examples(row, expected):
    np.testing.assert_allclose(softmax_rows(np.array([row]))[0], expected, atol=1e-12)


def test_softmax_rows_sum_to_one_for_large_entries(rng):
    for _ in range(100):
        m = rng.uniform(-1e3, 1e3, size=(4, 9))
        s = softmax_rows(m)
        assert np.all(s >= 0)
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)


@pytest.mark.parametrize(
    "u, v, expected",
    [
        ([1, 0], [1, 0], 1.0),
        ([1, 0], [0, 1], 0.0),
        ([1, 2], [2, 1], 0.8),
    ],
)
def test_cosine_examples(u, v, expected):
    assert cosine(u, v) == pytest.approx(expected, abs=1e-12)


def test_cosine_symmetric_and_scale_invariant(rng):
    for _ in range(50):
        u, v = rng.standard_normal(6), rng.standard_normal(6)
        alpha = rng.uniform(0.1, 50.0)
        assert cosine(u, v) == pytest.approx(cosine(v, u), abs=1e-12)
        assert cosine(alpha * u, v) == pytest.approx(cosine(u, v), abs=1e-12)
        assert -1.0 <= cosine(u, v) <= 1.0


def test_cosine_rejects_zero_vector():
    with pytest.raises(ValueError, match="zero vector"):
        cosine([0.0, 0.0], [1.0, 0.0])


def test_non_finite_input_rejected():
    with pytest.raises(ValueError, match="non-finite"):
        softmax_rows(np.array([[np.nan, 0.0]]))


def test_spatial_mean_over_last_two_axes():
    x = np.arange(24, dtype=float).reshape(2, 3, 4)
    np.testing.assert_allclose(spatial_mean(x), x.reshape(2, 12).mean(axis=1))
