"""
Tests for the FFT layer and its spatial-domain oracles
"""

import numpy as np
import pytest

from iterdeconv.errors import NonFiniteError, ShapeMismatchError, SymmetryError
from iterdeconv.tensor_fft import (
    as_real_field,
    circular_convolve,
    dft2_direct,
    fft2,
    ifft2,
    reflect_indices,
    transpose,
)


@pytest.mark.parametrize("shape", [(1, 1), (5, 7), (8, 8), (11, 16), (16, 13)])
def test_fft2_matches_direct_dft(rng, shape):
    x = rng.random(shape)
    np.testing.assert_allclose(fft2(x), dft2_direct(x), atol=1e-9)


def test_round_trip_recovers_field(rng):
    x = rng.normal(size=(8, 8))
    np.testing.assert_allclose(ifft2(fft2(x)), x, atol=1e-12)


def test_parseval(rng):
    x = rng.normal(size=(9, 12))
    spectrum = fft2(x)
    energy = np.sum(x ** 2)
    assert np.sum(np.abs(spectrum) ** 2) / x.size == pytest.approx(energy, rel=1e-10)


def test_linearity(rng):
    a, b = rng.normal(size=(6, 10)), rng.normal(size=(6, 10))
    np.testing.assert_allclose(fft2(2.5 * a - 0.75 * b), 2.5 * fft2(a) - 0.75 * fft2(b), atol=1e-12)


def test_real_field_spectrum_is_conjugate_symmetric(rng):
    spectrum = fft2(rng.random((7, 6)))
    np.testing.assert_allclose(reflect_indices(spectrum), np.conj(spectrum), atol=1e-12)


@pytest.mark.parametrize("seed", range(50))
def test_convolution_theorem(seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    a, b = rng.normal(size=(6, 6)), rng.normal(size=(6, 6))
    direct = circular_convolve(a, b)
    np.testing.assert_allclose(ifft2(fft2(a) * fft2(b)), direct, atol=1e-10)
    expected = fft2(a) * fft2(b)
    assert np.max(np.abs(fft2(direct) - expected)) <= 1e-9 * max(1.0, np.max(np.abs(expected)))


def test_ifft2_rejects_asymmetric_spectrum():
    spectrum = np.zeros((4, 4), dtype=complex)
    spectrum[0, 1] = 1.0
    with pytest.raises(SymmetryError):
        ifft2(spectrum)


def test_ifft2_tolerates_rounding_noise(rng):
    spectrum = fft2(rng.random((8, 8)))
    spectrum[0, 1] += 1e-13
    assert ifft2(spectrum).shape == (8, 8)


def test_as_real_field_rejects_bad_input():
    with pytest.raises(NonFiniteError):
        as_real_field(np.array([[0.0, np.nan]]))
    with pytest.raises(ShapeMismatchError):
        as_real_field(np.zeros(4))
    with pytest.raises(ShapeMismatchError):
        as_real_field(np.zeros((0, 3)))


def test_circular_convolve_requires_matching_shapes():
    with pytest.raises(ShapeMismatchError):
        circular_convolve(np.zeros((3, 3)), np.zeros((3, 4)))


def test_transpose_is_contiguous(rng):
    x = rng.random((3, 5))
    t = transpose(x)
    assert t.shape == (5, 3)
    assert t.flags["C_CONTIGUOUS"]
    np.testing.assert_array_equal(t, x.T)
