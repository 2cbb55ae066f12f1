import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from kaclab.cloud import WeightedPointCloud, union_support, weight_function

coords = st.floats(-5, 5, allow_nan=False)


def test_merges_duplicates_and_sorts():
    mu = WeightedPointCloud([[1.0, 0], [0.0, 0], [1.0, 0]], [0.2, 0.3, 0.5])
    assert mu.size == 2
    assert mu.points.tolist() == [[0.0, 0.0], [1.0, 0.0]]
    assert mu.weights.tolist() == [0.3, 0.7]


def test_empirical_and_dirac():
    mu = WeightedPointCloud.empirical(np.eye(3))
    assert mu.is_probability()
    assert np.allclose(mu.weights, 1 / 3)
    d = WeightedPointCloud.dirac([1.0, 2.0])
    assert d.dim == 2 and d.total_mass == 1.0


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        WeightedPointCloud([[0.0, 0.0]], [1.0, 2.0])
    with pytest.raises(ValueError):
        WeightedPointCloud([[np.nan, 0.0]], [1.0])


def test_signed_arithmetic():
    mu = WeightedPointCloud([[0.0], [1.0]], [0.5, 0.5])
    nu = WeightedPointCloud([[1.0], [2.0]], [0.5, 0.5])
    diff = mu - nu
    assert diff.points.ravel().tolist() == [0.0, 1.0, 2.0]
    assert diff.weights.tolist() == [0.5, 0.0, -0.5]
    assert diff.abs().total_mass == 1.0
    assert (mu - mu).integrate(lambda x: x[:, 0] ** 2) == 0.0


def test_weight_function():
    assert weight_function(np.array([[0.0, 0.0], [1.0, 1.0]])).tolist() == [1.0, 3.0]


@given(arrays(np.float64, (6, 2), elements=coords), arrays(np.float64, (4, 2), elements=coords))
def test_union_support_preserves_masses(p, q):
    mu, nu = WeightedPointCloud.empirical(p), WeightedPointCloud.empirical(q)
    x, a, b = union_support(mu, nu)
    assert len(np.unique(x, axis=0)) == len(x)
    assert np.isclose(a.sum(), 1.0) and np.isclose(b.sum(), 1.0)
    f = lambda z: np.sin(z[:, 0]) + z[:, 1] ** 2
    assert np.isclose(np.dot(a, f(x)), mu.integrate(f))
    assert np.isclose(np.dot(b, f(x)), nu.integrate(f))
