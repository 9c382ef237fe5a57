"""
Forward observation model y = k * x + n and training-data synthesis.

Every random draw comes from numpy's PCG64 generator. Dataset entries derive
independent substreams from (seed, entry index), so parallel and serial
synthesis write identical bytes.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .deconv import psf2otf
from .errors import ConfigError, KernelError, ShapeMismatchError
from .image_io import (
    DatasetEntry,
    DatasetManifest,
    read_image,
    read_kernel,
    write_image,
    write_kernel,
    write_manifest,
)
from .kernel import BlurKernel
from .tensor_fft import as_real_field, fft2, ifft2

logger = logging.getLogger(__name__)

MIN_GENERATED_SIZE = 11
MAX_GENERATED_SIZE = 31


class Boundary(Enum):
    CIRCULAR = "circular"
    REPLICATE_TAPER = "replicate-taper"


@dataclass
class SynthesisConfig:
    noise_sigma: float = 0.01
    seed: int = 0
    boundary: Boundary = Boundary.CIRCULAR

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be non-negative, got {self.noise_sigma}")


def make_rng(*entropy: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


def _check_fits(image: np.ndarray, kernel: BlurKernel) -> None:
    if kernel.shape[0] > image.shape[0] or kernel.shape[1] > image.shape[1]:
        raise KernelError(f"kernel {kernel.shape} is larger than image {image.shape}")


def circular_blur(x: np.ndarray, kernel: BlurKernel) -> np.ndarray:
    height, width = x.shape
    return ifft2(psf2otf(kernel, height, width) * fft2(x))


def replicate_blur(x: np.ndarray, kernel: BlurKernel) -> np.ndarray:
    """Linear convolution with edge-replicated borders, cropped to the input size"""
    rh, rw = kernel.shape[0] // 2, kernel.shape[1] // 2
    padded = np.pad(x, ((rh, rh), (rw, rw)), mode="edge")
    return circular_blur(padded, kernel)[rh:rh + x.shape[0], rw:rw + x.shape[1]]


def _taper_profile(profile: np.ndarray, length: int) -> np.ndarray:
    autocorr = np.correlate(profile, profile, mode="full")
    autocorr = autocorr / autocorr.max()
    tail = autocorr[len(profile) - 1:]
    weights = np.ones(length)
    ramp = min(len(tail), (length + 1) // 2)
    for d in range(ramp):
        weights[d] = min(weights[d], 1.0 - tail[d])
        weights[length - 1 - d] = min(weights[length - 1 - d], 1.0 - tail[d])
    return weights


def edge_taper(y: np.ndarray, kernel: BlurKernel) -> np.ndarray:
    """Blend the borders towards their circular blur so the FFT solver sees no seam"""
    y = as_real_field(y, "y")
    alpha = np.outer(
        _taper_profile(kernel.taps.sum(axis=1), y.shape[0]),
        _taper_profile(kernel.taps.sum(axis=0), y.shape[1]),
    )
    return alpha * y + (1.0 - alpha) * circular_blur(y, kernel)


def blur_synthesize(x, kernel: BlurKernel, cfg: SynthesisConfig) -> np.ndarray:
    """Blur x with the centered kernel and add i.i.d. Gaussian noise"""
    x = as_real_field(x, "x")
    _check_fits(x, kernel)
    if cfg.boundary is Boundary.CIRCULAR:
        y = circular_blur(x, kernel)
    else:
        y = replicate_blur(x, kernel)

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    if cfg.noise_sigma > 0:
        y = y + rng.normal(0.0, cfg.noise_sigma, size=y.shape)

    if cfg.boundary is Boundary.REPLICATE_TAPER:
        y = edge_taper(y, kernel)
    return y


def generate_kernel(seed: int, size: int) -> BlurKernel:
    """
    Simulated camera-shake kernel.

    A unit-speed random walk with inertia and occasional abrupt turns is
    bilinearly splatted on a size x size grid, smoothed by a 3-tap Gaussian,
    clipped and normalized.
    """
    if size % 2 == 0 or not MIN_GENERATED_SIZE <= size <= MAX_GENERATED_SIZE:
        raise KernelError(
            f"kernel size must be odd and within [{MIN_GENERATED_SIZE}, {MAX_GENERATED_SIZE}], got {size}"
        )
    rng = make_rng(seed)
    n_steps = 10 * size
    length = rng.uniform(0.4, 1.0) * (size - 3)
    inertia = rng.uniform(0.7, 0.95)
    turn_rate = rng.uniform(0.0, 0.03)

    velocity = np.exp(2j * np.pi * rng.random())
    path = np.zeros(n_steps + 1, dtype=np.complex128)
    for t in range(n_steps):
        jitter = rng.normal() + 1j * rng.normal()
        velocity = inertia * velocity + (1.0 - inertia) * jitter
        if rng.random() < turn_rate:
            velocity *= np.exp(1j * (np.pi + rng.normal(scale=0.5)))
        velocity /= max(abs(velocity), 1e-12)
        path[t + 1] = path[t] + velocity * (length / n_steps)

    center = (size - 1) / 2.0
    xs, ys = path.real, path.imag
    xs = xs - (xs.max() + xs.min()) / 2.0
    ys = ys - (ys.max() + ys.min()) / 2.0
    extent = max(np.ptp(xs), np.ptp(ys), 1e-12)
    limit = size - 3.0
    if extent > limit:
        xs, ys = xs * limit / extent, ys * limit / extent
    xs, ys = xs + center, ys + center

    taps = np.zeros((size, size))
    j0, i0 = np.floor(xs).astype(int), np.floor(ys).astype(int)
    fx, fy = xs - j0, ys - i0
    np.add.at(taps, (i0, j0), (1 - fy) * (1 - fx))
    np.add.at(taps, (i0, j0 + 1), (1 - fy) * fx)
    np.add.at(taps, (i0 + 1, j0), fy * (1 - fx))
    np.add.at(taps, (i0 + 1, j0 + 1), fy * fx)

    smooth = np.array([np.exp(-2.0), 1.0, np.exp(-2.0)])
    smooth /= smooth.sum()
    taps = np.apply_along_axis(lambda row: np.convolve(row, smooth, mode="same"), 1, taps)
    taps = np.apply_along_axis(lambda col: np.convolve(col, smooth, mode="same"), 0, taps)
    return BlurKernel.normalized(np.clip(taps, 0.0, None))


def kernel_size_for_seed(seed: int) -> int:
    """Odd size in [11, 31] drawn from the kernel's own seed"""
    return int(make_rng(seed, 1).integers(0, 11)) * 2 + MIN_GENERATED_SIZE


def synthetic_scene(seed: int, size: int) -> np.ndarray:
    """Clean test image: shaded background, flat shapes, fine texture"""
    rng = make_rng(seed)
    rows, cols = np.mgrid[0:size, 0:size] / float(size)
    image = 0.3 + 0.3 * (rng.uniform(-1, 1) * rows + rng.uniform(-1, 1) * cols)
    for _ in range(int(rng.integers(4, 9))):
        value = rng.uniform(0.1, 0.9)
        if rng.random() < 0.5:
            r0, c0 = rng.uniform(0, 0.8, size=2)
            r1, c1 = r0 + rng.uniform(0.1, 0.5), c0 + rng.uniform(0.1, 0.5)
            mask = (rows >= r0) & (rows < r1) & (cols >= c0) & (cols < c1)
        else:
            cr, cc = rng.uniform(0.1, 0.9, size=2)
            radius = rng.uniform(0.05, 0.3)
            mask = (rows - cr) ** 2 + (cols - cc) ** 2 < radius ** 2
        image[mask] = value
    frequency = rng.uniform(8, 20)
    image += 0.03 * np.sin(2 * np.pi * frequency * (rows + rng.uniform(0.5, 1.5) * cols))
    return np.clip(image, 0.05, 0.95)


def quantize(image: np.ndarray, bit_depth: int = 16) -> np.ndarray:
    """Round to the PGM levels a write/read round trip would produce"""
    maxval = 255 if bit_depth == 8 else 65535
    return np.rint(np.clip(image, 0.0, 1.0) * maxval) / maxval


def synthesize_dataset(clean_images: Sequence[Tuple[str, np.ndarray]], kernel_seeds: Sequence[int],
                       noise_sigma: float, patch_size: int, seed: int,
                       out_dir: Union[str, Path], threads: int = 1,
                       kernel_sizes: Optional[Sequence[int]] = None) -> Tuple[DatasetManifest, Path]:
    """
    Crop one patch per (image, kernel) pair, blur it and add noise.

    Writes clean patches, kernels and blurred observations under out_dir and a
    manifest.tsv listing them. Entry e = image_index * len(kernel_seeds) +
    kernel_index draws its crop and noise seed from the substream (seed, e).
    """
    if noise_sigma < 0:
        raise ConfigError(f"noise sigma must be non-negative, got {noise_sigma}")
    if not kernel_seeds:
        raise ConfigError("at least one kernel seed is required")
    out_dir = Path(out_dir)
    for sub in ("clean", "kernels", "blurred"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    kernels: List[Tuple[Path, BlurKernel]] = []
    for index, kernel_seed in enumerate(kernel_seeds):
        size = kernel_sizes[index % len(kernel_sizes)] if kernel_sizes else kernel_size_for_seed(kernel_seed)
        if size > patch_size:
            raise KernelError(f"kernel size {size} exceeds patch size {patch_size}")
        kernel = generate_kernel(kernel_seed, size)
        kernel_path = out_dir / "kernels" / f"k{index:03d}.txt"
        write_kernel(kernel_path, kernel)
        kernels.append((kernel_path, kernel))

    for name, image in clean_images:
        if image.shape[0] < patch_size or image.shape[1] < patch_size:
            raise ShapeMismatchError(
                f"image {name} {image.shape} is smaller than patch size {patch_size}"
            )

    jobs = [(i, j) for i in range(len(clean_images)) for j in range(len(kernels))]

    def build(job: Tuple[int, int]) -> DatasetEntry:
        i, j = job
        entry_index = i * len(kernels) + j
        name, image = clean_images[i]
        rng = make_rng(seed, entry_index)
        row = int(rng.integers(0, image.shape[0] - patch_size + 1))
        col = int(rng.integers(0, image.shape[1] - patch_size + 1))
        noise_seed = int(rng.integers(0, 2 ** 63 - 1))
        patch = quantize(image[row:row + patch_size, col:col + patch_size])

        kernel_path, kernel = kernels[j]
        blurred = blur_synthesize(patch, kernel, SynthesisConfig(noise_sigma, noise_seed))
        clean_path = out_dir / "clean" / f"{Path(name).stem}_{entry_index:05d}.pgm"
        blurred_path = out_dir / "blurred" / f"{entry_index:05d}.pgm"
        write_image(clean_path, patch)
        write_image(blurred_path, blurred)
        return DatasetEntry(clean_path, kernel_path, noise_sigma, noise_seed, blurred_path)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(build, jobs))
    else:
        entries = [build(job) for job in jobs]

    manifest = DatasetManifest(entries)
    manifest_path = out_dir / "manifest.tsv"
    write_manifest(manifest_path, manifest)
    logger.info(f"Synthesized {len(entries)} entries at sigma {noise_sigma} into {out_dir}")
    return manifest, manifest_path


@dataclass
class Observation:
    """A clean patch, its kernel and the float64 blurred observation"""
    clean: np.ndarray
    kernel: BlurKernel
    blurred: np.ndarray


def load_observation(entry: DatasetEntry) -> Observation:
    """Rebuild the exact float64 observation of a manifest entry from its seed"""
    clean = read_image(entry.clean_path)
    kernel = read_kernel(entry.kernel_path)
    blurred = blur_synthesize(clean, kernel, SynthesisConfig(entry.sigma, entry.seed))
    return Observation(clean, kernel, blurred)


def load_observations(manifest: DatasetManifest) -> List[Observation]:
    return [load_observation(entry) for entry in manifest.entries]
