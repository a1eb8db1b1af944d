import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from golf.errors import InvalidParameterError
from golf.kernels import Family, KernelSpec, corr_matrix, kernel_1d, kernel_eval


def test_zero_distance_is_one():
    assert kernel_eval(KernelSpec("matern52", 1.0), 0.0) == 1.0


def test_exponential_substitution():
    assert kernel_eval(KernelSpec("exponential", 2.0), 2.0) == pytest.approx(np.exp(-1.0), rel=1e-15)


def test_matern52_substitution():
    want = (1 + np.sqrt(5) + 5 / 3) * np.exp(-np.sqrt(5))
    assert kernel_eval(KernelSpec("matern52", 1.0), 1.0) == pytest.approx(want, rel=1e-15)


def test_gaussian_value():
    assert kernel_eval(KernelSpec("gaussian", 0.5), 1.0) == pytest.approx(np.exp(-2.0), rel=1e-15)


@pytest.mark.parametrize("bad", [0.0, -1.0, np.inf, np.nan])
def test_invalid_range(bad):
    with pytest.raises(InvalidParameterError):
        KernelSpec("matern52", bad)


@pytest.mark.parametrize("dist", [-0.1, np.inf, np.nan])
def test_invalid_distance(dist):
    with pytest.raises(InvalidParameterError):
        kernel_eval(KernelSpec("exponential", 1.0), dist)


def test_family_aliases():
    assert Family.parse("Matern_5_2") is Family.MATERN52
    assert Family.parse("exp") is Family.EXPONENTIAL
    with pytest.raises(InvalidParameterError):
        Family.parse("matern32")
    with pytest.raises(InvalidParameterError):
        Family.GAUSSIAN.state_dim


def test_corr_matrix_one_point():
    np.testing.assert_array_equal(corr_matrix(KernelSpec("matern52", 0.3), [[0.7]]), [[1.0]])


def test_corr_matrix_two_points_exponential():
    R = corr_matrix(KernelSpec("exponential", 0.5), [0.1, 0.4])
    np.testing.assert_allclose(R[0, 1], np.exp(-0.3 / 0.5), rtol=1e-15)


@pytest.mark.parametrize("family", ["exponential", "matern52", "gaussian"])
def test_corr_matrix_psd_and_symmetric(family):
    rng = np.random.default_rng(5)
    X = rng.uniform(0, 1, (5, 2))
    R = corr_matrix(KernelSpec(family, [0.4, 0.9]), X)
    np.testing.assert_array_equal(R, R.T)
    np.testing.assert_array_equal(np.diag(R), 1.0)
    assert np.linalg.eigvalsh(R).min() >= -1e-10


def test_distances_are_per_coordinate():
    # product kernel on |ds| and |dx|, not on the Euclidean distance
    spec = KernelSpec("exponential", [1.0, 1.0])
    R = corr_matrix(spec, [[0.0, 0.0], [0.3, 0.4]])
    assert R[0, 1] == pytest.approx(np.exp(-0.7), rel=1e-15)


def test_huge_distance_matern_is_zero():
    assert kernel_1d("matern52", 1e308, 1e-10) == 0.0


dist = st.floats(0, 50, allow_nan=False)
gamma = st.floats(0.01, 10)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["exponential", "matern52", "gaussian"]), gamma, dist, dist)
def test_monotone_nonincreasing(family, g, a, b):
    lo, hi = sorted((a, b))
    spec = KernelSpec(family, g)
    assert kernel_eval(spec, hi) <= kernel_eval(spec, lo) + 1e-15


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["exponential", "matern52"]), st.lists(gamma, min_size=3, max_size=3),
       st.lists(dist, min_size=3, max_size=3))
def test_product_law(family, gs, ds):
    spec = KernelSpec(family, gs)
    parts = [kernel_eval(KernelSpec(family, g), d) for g, d in zip(gs, ds)]
    np.testing.assert_allclose(kernel_eval(spec, ds), np.prod(parts), rtol=1e-14, atol=1e-300)
