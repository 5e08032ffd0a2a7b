import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pcalign.robustloss import (
    SIGMA_FLOOR,
    AlignmentError,
    residuals,
    sigma_fixed_point,
    t_weights,
    weighted_loss,
)


def test_residual_examples():
    c = np.random.default_rng(0).uniform(size=(5, 3))
    assert not residuals(c, c).any()
    np.testing.assert_array_equal(residuals(np.ones((1, 3)), np.zeros((1, 3))), np.ones((1, 3)))
    assert np.all(residuals(np.full((1, 3), 0.2), np.full((1, 3), 0.5)) < 0)


def test_residual_mask_and_failure():
    a = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(residuals(a, np.zeros_like(a), np.array([False, True])), a[1:])
    with pytest.raises(AlignmentError):
        residuals(a, a, np.array([False, False]))
    with pytest.raises(ValueError):
        residuals(a, a[:1])


def test_weight_examples():
    assert t_weights(0.0, 1.0) == pytest.approx(1.2, abs=1e-15)
    assert t_weights(0.3, 0.3) == pytest.approx(1.0, abs=1e-15)
    assert t_weights(10 * 0.7, 0.7) == pytest.approx(6 / 105, rel=1e-12)
    with pytest.raises(ValueError):
        t_weights(1.0, 0.0)


@given(st.floats(0, 100), st.floats(0, 100), st.floats(1e-3, 10))
def test_weights_decreasing_and_bounded(a, b, sigma):
    wa, wb = t_weights(a, sigma), t_weights(b, sigma)
    assert 0 < wa <= 1.2 and 0 < wb <= 1.2
    if a < b:
        assert wa >= wb
    if b - a > 1e-6 * sigma:
        assert wa > wb


@pytest.mark.parametrize("rho", [1e-4, 0.01, 0.3, -0.7, 5.0])
def test_sigma_equal_residuals(rho):
    r = np.full((40, 3), rho)
    assert sigma_fixed_point(r) == pytest.approx(abs(rho), rel=1e-9)
    assert sigma_fixed_point(np.full((1, 3), rho)) == pytest.approx(abs(rho), rel=1e-9)


def test_sigma_zero_residuals():
    assert sigma_fixed_point(np.zeros((10, 3))) == SIGMA_FLOOR
    np.testing.assert_allclose(t_weights(np.zeros(3), SIGMA_FLOOR), 1.2)


def test_sigma_homogeneous(rng):
    for _ in range(100):
        r = rng.standard_t(3, size=(50, 3)) * 0.1
        s = rng.uniform(0.01, 100)
        assert sigma_fixed_point(s * r, tol=1e-13, max_iter=500) == pytest.approx(
            s * sigma_fixed_point(r, tol=1e-13, max_iter=500), rel=1e-9)


def test_sigma_converges_on_heavy_tails(rng):
    for i in range(1000):
        r = (rng.standard_cauchy if i % 2 else rng.normal)(size=(rng.integers(1, 200), 3))
        sigma, it, done = sigma_fixed_point(r, full_output=True)
        assert done and it <= 50 and sigma > 0


def test_sigma_is_fixed_point(rng):
    r = rng.normal(size=(100, 3))
    sigma = sigma_fixed_point(r, tol=1e-14, max_iter=1000)
    w = t_weights(r, sigma)
    assert np.mean(r * r * w) == pytest.approx(sigma**2, rel=1e-10)


def test_loss_examples(rng):
    assert weighted_loss(np.zeros((3, 3)), np.ones((3, 3))) == 0
    assert weighted_loss(np.array([[2.0]]), np.array([[1.2]])) == pytest.approx(4.8, abs=1e-15)
    r = rng.normal(size=(30, 3))
    w = rng.uniform(size=(30, 3))
    naive = 0.0
    for j in range(30):
        for c in range(3):
            naive += w[j, c] * r[j, c] ** 2
    assert weighted_loss(r, w) == pytest.approx(naive, abs=1e-12)


@given(arrays(float, (12, 3), elements=st.floats(-2, 2)), st.integers(0, 2**32 - 1))
def test_loss_permutation_invariant(r, seed):
    w = t_weights(r, 0.5)
    perm = np.random.default_rng(seed).permutation(12)
    assert weighted_loss(r[perm], w[perm]) == pytest.approx(weighted_loss(r, w), rel=1e-12, abs=1e-15)


@given(arrays(float, (5, 3), elements=st.floats(-2, 2)), arrays(float, (5, 3), elements=st.floats(-2, 2)))
def test_loss_convex_in_residuals(a, b):
    w = np.full((5, 3), 0.8)
    mid = weighted_loss((a + b) / 2, w)
    assert mid <= 0.5 * (weighted_loss(a, w) + weighted_loss(b, w)) + 1e-12
