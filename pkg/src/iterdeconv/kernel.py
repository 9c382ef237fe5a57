"""
Blur kernel value type shared by synthesis, I/O and deconvolution.
"""

from dataclasses import dataclass

import numpy as np

from .errors import KernelError

MAX_KERNEL_SIZE = 31
SUM_TOLERANCE = 1e-9
NEGATIVE_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class BlurKernel:
    """Non-negative odd-sized kernel whose taps sum to 1"""

    taps: np.ndarray

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.float64)
        if taps.ndim != 2:
            raise KernelError(f"kernel must be 2-D, got shape {taps.shape}")
        height, width = taps.shape
        for extent in (height, width):
            if extent < 1 or extent > MAX_KERNEL_SIZE or extent % 2 == 0:
                raise KernelError(
                    f"kernel dimensions must be odd and within [1, {MAX_KERNEL_SIZE}], got {taps.shape}"
                )
        if not np.all(np.isfinite(taps)):
            raise KernelError("kernel contains non-finite taps")
        if np.any(taps < -NEGATIVE_TOLERANCE):
            raise KernelError(f"kernel has negative taps (min {taps.min():.3e})")
        taps = np.clip(taps, 0.0, None)
        total = taps.sum()
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise KernelError(f"kernel taps must sum to 1, got {total:.12f}")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def shape(self):
        return self.taps.shape

    @classmethod
    def identity(cls) -> "BlurKernel":
        return cls(np.ones((1, 1)))

    @classmethod
    def normalized(cls, taps) -> "BlurKernel":
        """Build a kernel from arbitrary non-negative taps by rescaling to unit sum"""
        taps = np.clip(np.asarray(taps, dtype=np.float64), 0.0, None)
        total = taps.sum()
        if total <= 0:
            raise KernelError("kernel has no positive mass")
        return cls(taps / total)

    @classmethod
    def gaussian(cls, size: int, sigma: float) -> "BlurKernel":
        radius = size // 2
        axis = np.arange(-radius, radius + 1, dtype=np.float64)
        profile = np.exp(-(axis ** 2) / (2.0 * sigma ** 2))
        return cls.normalized(np.outer(profile, profile))

    @classmethod
    def box(cls, size: int) -> "BlurKernel":
        return cls.normalized(np.ones((size, size)))
