import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.signal import convolve2d

from madshade.filters import (EPS, atrous_blur, blur_irradiance, compress_depth, irradiance,
                              normalize_mu, normalize_prime, remove_scale_and_compress,
                              rescale_denoised)
from madshade.numerics import Tensor

B5 = np.array([1, 4, 6, 4, 1]) / 16


def dilated_kernel(iterations):
    """Equivalent single kernel of the whole cascade, built by full convolution."""
    k = np.ones((1, 1))
    for i in range(iterations):
        step = 2 ** i
        taps = np.zeros(4 * step + 1)
        taps[::step] = B5
        k = convolve2d(k, np.outer(taps, taps))
    return k


def test_constant_image_is_fixed_point():
    img = np.full((13, 9, 3), 0.37)
    np.testing.assert_array_equal(atrous_blur(img, 6), img)


def test_impulse_single_iteration():
    img = np.zeros((11, 11))
    img[5, 5] = 1.0
    out = atrous_blur(img, 1)
    np.testing.assert_allclose(out[3:8, 3:8], np.outer(B5, B5), atol=1e-12)
    assert out.sum() == pytest.approx(1.0)
    assert np.count_nonzero(out) == 25


@pytest.mark.parametrize("iterations", [1, 2, 3, 4])
def test_impulse_matches_dilated_kernel(iterations):
    k = dilated_kernel(iterations)
    r = k.shape[0] // 2
    n = 2 * r + 9
    img = np.zeros((n, n))
    img[n // 2, n // 2] = 1.0
    out = atrous_blur(img, iterations)
    c = n // 2
    np.testing.assert_allclose(out[c - r:c + r + 1, c - r:c + r + 1], k, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(3, 20), st.integers(3, 20)),
              elements=st.floats(0, 100)), st.integers(0, 6))
def test_mean_preserved(img, iterations):
    out = atrous_blur(img, iterations)
    assert out.mean() == pytest.approx(img.mean(), rel=1e-4, abs=1e-12)
    assert np.all(out >= 0)


def test_negative_iterations_rejected():
    with pytest.raises(ValueError):
        atrous_blur(np.zeros((4, 4)), -1)


# -- range compression -------------------------------------------------------

def test_compression_keeps_zero():
    mu = np.zeros((4, 5, 15))
    np.testing.assert_array_equal(remove_scale_and_compress(mu, blur_irradiance(mu)), 0.0)


def test_compression_hand_value():
    c = 0.3
    mu = np.zeros(15)
    mu[:5] = [c, 0.1, 0.2, 0.05, 0.6]
    blurred = np.array([c, 1.0, 1.0])
    out = remove_scale_and_compress(mu[None, None], blurred[None, None])[0, 0]
    l2 = math.log(2.0)
    np.testing.assert_allclose(out[:5], [l2, 0.1 / c * l2, 0.2 / c * l2, 0.05 / c * l2,
                                         0.6 / c * l2], rtol=1e-12)
    np.testing.assert_array_equal(out[5:], 0.0)


def test_compression_is_scale_free():
    rng = np.random.default_rng(0)
    mu = rng.uniform(0.01, 2, (6, 6, 15))
    blurred = blur_irradiance(mu)
    a = remove_scale_and_compress(mu, blurred)
    b = remove_scale_and_compress(37.0 * mu, 37.0 * blurred)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_depth_compression():
    np.testing.assert_array_equal(compress_depth(np.full((8, 8), 4.2)), 0.0)
    depth = np.full((16, 16), 1.0)
    depth[8, 8] = 1e3  # blurred value stays well below a third of it
    assert compress_depth(depth)[8, 8] == 1.0
    rng = np.random.default_rng(1)
    d = rng.uniform(0.5, 5, (10, 10))
    np.testing.assert_allclose(compress_depth(d), compress_depth(3.5 * d), atol=1e-12)
    assert np.all(np.abs(compress_depth(d)) <= 1.0)


def test_rescale():
    rng = np.random.default_rng(2)
    u = rng.normal(size=(3, 4, 15))
    np.testing.assert_array_equal(rescale_denoised(u, np.zeros((3, 4, 3))), 0.0)
    np.testing.assert_array_equal(rescale_denoised(u, np.ones((3, 4, 3))), u)
    blurred = rng.uniform(0, 2, (3, 4, 3))
    np.testing.assert_array_equal(rescale_denoised(u, 2 * blurred), 2 * rescale_denoised(u, blurred))
    t = rescale_denoised(Tensor(u), blurred).data
    np.testing.assert_allclose(t, rescale_denoised(u, blurred))


def test_normalization():
    rng = np.random.default_rng(3)
    mu = rng.uniform(0.1, 1, (5, 15))
    n = normalize_mu(mu)
    np.testing.assert_allclose(n[:, ::5], 1.0)
    np.testing.assert_array_equal(normalize_mu(np.zeros((2, 15))), 0.0)
    scaled = mu.copy()
    scaled[:, 5:10] *= 9.0
    np.testing.assert_allclose(normalize_mu(scaled), n, rtol=1e-12)
    small = mu.copy()
    small[:, 0] = EPS / 10
    assert np.all(normalize_mu(small)[:, 0] < 1)
    assert normalize_prime(mu).shape == (5, 12)
    np.testing.assert_allclose(normalize_prime(mu), np.delete(n, [0, 5, 10], axis=1))


def test_irradiance_channels():
    mu = np.arange(15.0)[None]
    np.testing.assert_array_equal(irradiance(mu), [[0, 5, 10]])
