"""
Dense 2-D field arithmetic and the discrete Fourier transform.

Real fields are float64 arrays of shape (H, W); frequency fields are complex128
arrays of the same shape with the DC bin at [0, 0] (unshifted layout).
"""

import logging

import numpy as np

from .errors import NonFiniteError, ShapeMismatchError, SymmetryError

logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-8


def as_real_field(field, name: str = "field") -> np.ndarray:
    """Validate and convert to a float64 (H, W) array"""
    arr = np.asarray(field, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatchError(f"{name} must be a non-empty 2-D field, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


def require_same_shape(*fields: np.ndarray) -> None:
    shapes = {np.shape(f) for f in fields}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"fields must share dimensions, got {sorted(shapes)}")


def reflect_indices(spectrum: np.ndarray) -> np.ndarray:
    """Return F[-u mod H, -v mod W] for every bin"""
    return np.roll(np.flip(spectrum, axis=(0, 1)), shift=(1, 1), axis=(0, 1))


def fft2(field) -> np.ndarray:
    """Unnormalized forward 2-D DFT of a real field"""
    arr = as_real_field(field)
    return np.fft.fft2(arr)


def ifft2(spectrum, tolerance: float = SYMMETRY_TOLERANCE) -> np.ndarray:
    """
    Inverse 2-D DFT with 1/(HW) normalization, returning a real field.

    The spectrum must be conjugate symmetric; the tolerance is absolute for
    spectra of magnitude up to 1 and relative beyond that. A violation means
    some upstream formula produced a spectrum that has no real inverse.
    """
    spec = np.asarray(spectrum, dtype=np.complex128)
    if spec.ndim != 2 or spec.size == 0:
        raise ShapeMismatchError(f"spectrum must be a non-empty 2-D field, got shape {spec.shape}")
    if not np.all(np.isfinite(spec)):
        raise NonFiniteError("spectrum contains non-finite values")

    asymmetry = np.max(np.abs(spec - np.conj(reflect_indices(spec))))
    scale = max(1.0, float(np.max(np.abs(spec))))
    if asymmetry > tolerance * scale:
        raise SymmetryError(
            f"spectrum violates conjugate symmetry by {asymmetry:.3e} (scale {scale:.3e})"
        )
    return np.fft.ifft2(spec).real.copy()


def circular_convolve(a, b) -> np.ndarray:
    """
    Periodic convolution evaluated directly in the spatial domain.

    c[i, j] = sum_{m, n} a[m, n] * b[(i - m) mod H, (j - n) mod W]. This is the
    O((HW)^2) oracle for the convolution theorem; use the FFT path for real work.
    """
    a = as_real_field(a, "a")
    b = as_real_field(b, "b")
    require_same_shape(a, b)

    out = np.zeros_like(a)
    height, width = a.shape
    for m in range(height):
        for n in range(width):
            if a[m, n] != 0.0:
                out += a[m, n] * np.roll(b, shift=(m, n), axis=(0, 1))
    return out


def dft2_direct(field) -> np.ndarray:
    """Direct O(N^2) DFT used to cross-check the fast transform on small sizes"""
    arr = as_real_field(field)
    height, width = arr.shape
    rows = np.exp(-2j * np.pi * np.outer(np.arange(height), np.arange(height)) / height)
    cols = np.exp(-2j * np.pi * np.outer(np.arange(width), np.arange(width)) / width)
    return rows @ arr @ cols.T


def transpose(field: np.ndarray) -> np.ndarray:
    """Swap the spatial axes, returning a contiguous copy"""
    return np.ascontiguousarray(np.swapaxes(field, -1, -2))
