"""
Deconvolution module: closed-form FFT minimizer of the half-quadratic x-subproblem.

For fixed auxiliary gradients z_h, z_w the image minimizing

    gamma * ||y - k * x||^2 + sum_l ||z_l - p_l * x||^2

under circular boundaries is

    x = F^-1( (gamma conj(K) Y + sum_l conj(P_l) Z_l) / (gamma |K|^2 + sum_l |P_l|^2) )

where capital letters are the spectra of the lower-case fields.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Tuple, Union

import numpy as np

from .errors import ConfigError, KernelError, ShapeMismatchError
from .kernel import BlurKernel
from .tensor_fft import as_real_field, fft2, ifft2, require_same_shape

logger = logging.getLogger(__name__)

DENOMINATOR_GUARD = 1e-12

# forward differences [+1, -1]; the -1 tap sits at the filter center
HORIZONTAL_FILTER = np.array([[1.0, -1.0]])
VERTICAL_FILTER = HORIZONTAL_FILTER.T


class ZInit(Enum):
    """Auxiliary gradients fed to the first deconvolution module"""
    ZERO = "zero"
    GRADIENT = "gradient"


def psf2otf(kernel: Union[BlurKernel, np.ndarray], height: int, width: int) -> np.ndarray:
    """
    Optical transfer function of a kernel at image size.

    The kernel is zero-embedded with its center tap (index size // 2 along each
    axis) moved to [0, 0] by a circular shift, then transformed. Multiplying by
    the result in frequency equals centered circular convolution in space.
    """
    taps = kernel.taps if isinstance(kernel, BlurKernel) else np.asarray(kernel, dtype=np.float64)
    kh, kw = taps.shape
    if kh > height or kw > width:
        raise KernelError(f"kernel {taps.shape} does not fit in a {height}x{width} field")

    embedded = np.zeros((height, width))
    embedded[:kh, :kw] = taps
    embedded = np.roll(embedded, shift=(-(kh // 2), -(kw // 2)), axis=(0, 1))
    return fft2(embedded)


def embed_kernel(kernel: Union[BlurKernel, np.ndarray], height: int, width: int) -> np.ndarray:
    """Spatial field whose circular convolution matches multiplication by psf2otf"""
    return ifft2(psf2otf(kernel, height, width))


def grad_extract(x) -> Tuple[np.ndarray, np.ndarray]:
    """Circular forward differences along columns (h) and rows (w)"""
    x = as_real_field(x, "image")
    grad_h = np.roll(x, -1, axis=1) - x
    grad_w = np.roll(x, -1, axis=0) - x
    return grad_h, grad_w


def grad_extract_adjoint(delta_h: np.ndarray, delta_w: np.ndarray) -> np.ndarray:
    """Adjoint of grad_extract: maps gradient-field sensitivities back to the image"""
    require_same_shape(delta_h, delta_w)
    return (np.roll(delta_h, 1, axis=1) - delta_h) + (np.roll(delta_w, 1, axis=0) - delta_w)


@dataclass(frozen=True, eq=False)
class DeconvPlan:
    """
    Kernel- and size-dependent spectra shared by every deconvolution step.

    G = |F(k)|^2 and H = |F(p_h)|^2 + |F(p_w)|^2 are stored as real arrays.
    A plan is immutable and may be shared between threads.
    """

    height: int
    width: int
    otf_k: np.ndarray
    otf_h: np.ndarray
    otf_w: np.ndarray
    G: np.ndarray
    H: np.ndarray

    @classmethod
    def build(cls, kernel: BlurKernel, height: int, width: int) -> "DeconvPlan":
        """Spectra of the kernel and of the fixed forward-difference filters"""
        otf_k = psf2otf(kernel, height, width)
        otf_h = psf2otf(HORIZONTAL_FILTER, height, width)
        otf_w = psf2otf(VERTICAL_FILTER, height, width)
        G = np.abs(otf_k) ** 2
        H = np.abs(otf_h) ** 2 + np.abs(otf_w) ** 2
        for arr in (otf_k, otf_h, otf_w, G, H):
            arr.setflags(write=False)
        return cls(height, width, otf_k, otf_h, otf_w, G, H)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def check_shape(self, *fields: np.ndarray) -> None:
        for field in fields:
            if np.shape(field) != self.shape:
                raise ShapeMismatchError(
                    f"field of shape {np.shape(field)} does not match plan {self.shape}"
                )

    def blur(self, x: np.ndarray) -> np.ndarray:
        """Centered circular convolution k * x"""
        self.check_shape(x)
        return ifft2(self.otf_k * fft2(x))

    def data_spectrum(self, y: np.ndarray) -> np.ndarray:
        """D = conj(F(k)) F(y)"""
        self.check_shape(y)
        return np.conj(self.otf_k) * fft2(y)

    def prior_spectrum(self, z_h: np.ndarray, z_w: np.ndarray) -> np.ndarray:
        """E = sum_l conj(F(p_l)) F(z_l)"""
        self.check_shape(z_h, z_w)
        return np.conj(self.otf_h) * fft2(z_h) + np.conj(self.otf_w) * fft2(z_w)

    def denominator(self, gamma: float) -> np.ndarray:
        return gamma * self.G + self.H + DENOMINATOR_GUARD


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not np.isfinite(gamma) or gamma <= 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    return gamma


def deconv_step(y, plan: DeconvPlan, z_h, z_w, gamma: float) -> np.ndarray:
    """Exact minimizer of the x-subproblem for the given auxiliary gradients"""
    gamma = _check_gamma(gamma)
    y = as_real_field(y, "y")
    z_h = as_real_field(z_h, "z_h")
    z_w = as_real_field(z_w, "z_w")
    plan.check_shape(y, z_h, z_w)

    numerator = gamma * plan.data_spectrum(y) + plan.prior_spectrum(z_h, z_w)
    return ifft2(numerator / plan.denominator(gamma))


def initial_z(y: np.ndarray, mode: ZInit = ZInit.ZERO) -> Tuple[np.ndarray, np.ndarray]:
    if mode is ZInit.GRADIENT:
        return grad_extract(y)
    return np.zeros_like(y), np.zeros_like(y)


def initial_deconv(y, plan: DeconvPlan, gamma0: float, z_init: ZInit = ZInit.ZERO) -> np.ndarray:
    """
    First deconvolution of the blurry input.

    With z = 0 this is a Tikhonov-regularized inverse filter with a gradient
    penalty; z_init=GRADIENT uses the observation's own gradients instead.
    """
    y = as_real_field(y, "y")
    z_h, z_w = initial_z(y, z_init)
    return deconv_step(y, plan, z_h, z_w, gamma0)


def hq_objective(x, y, plan: DeconvPlan, z_h, z_w, gamma: float) -> float:
    """Value of the x-subproblem objective (scaled by 1/beta)"""
    grad_h, grad_w = grad_extract(x)
    data = np.sum((y - plan.blur(x)) ** 2)
    prior = np.sum((z_h - grad_h) ** 2) + np.sum((z_w - grad_w) ** 2)
    return float(gamma * data + prior)
