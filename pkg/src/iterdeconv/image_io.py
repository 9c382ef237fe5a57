"""
File formats: PGM images, text kernels, weight archives, gradient-field dumps
and tab-separated manifests.

Weight archive layout (all integers u32 little-endian, all reals f64
little-endian):

    magic "IDCV" | version (1) | iteration count T | domain code | z_init code
    gamma0
    T times:
        gamma_t | layer count L
        L times: name length (u8) | ascii name | out | in | kh | kw | stride | pad
        L times: weights [out][in][kh][kw] | bias [out]

Gradient-field dump layout: magic "IDGF" | version (1) | height | width |
horizontal field row-major | vertical field row-major.
"""

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from .deconv import ZInit
from .errors import (
    ArchitectureMismatchError,
    FormatError,
    KernelError,
    LengthMismatchError,
    VersionMismatchError,
)
from .fcnn import ConvLayer, DenoiserWeights, Domain, LayerSpec, check_standard_architecture
from .kernel import BlurKernel

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

ARCHIVE_MAGIC = b"IDCV"
ARCHIVE_VERSION = 1
GRADIENT_MAGIC = b"IDGF"
GRADIENT_VERSION = 1

KERNEL_SUM_TOLERANCE = 1e-6
KERNEL_NEGATIVE_TOLERANCE = 1e-12

_DOMAIN_CODES = {Domain.GRADIENT: 0, Domain.INTENSITY: 1}
_ZINIT_CODES = {ZInit.ZERO: 0, ZInit.GRADIENT: 1}


# PGM ---------------------------------------------------------------------------

def _pgm_header(data: bytes) -> Tuple[List[int], int]:
    """Parse width, height, maxval; return them with the raster offset"""
    if not data.startswith(b"P5"):
        kind = data[:2].decode("ascii", errors="replace")
        raise FormatError(f"only binary PGM (P5) is supported, got '{kind}'")
    tokens: List[int] = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(data):
            raise FormatError("PGM header is truncated")
        byte = data[pos:pos + 1]
        if byte.isspace():
            pos += 1
        elif byte == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
                pos += 1
            token = data[start:pos]
            if not token.isdigit():
                raise FormatError(f"malformed PGM header token {token!r}")
            tokens.append(int(token))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("PGM header must end with a single whitespace byte")
    return tokens, pos + 1


def read_image(path: PathLike) -> np.ndarray:
    """Read an 8- or 16-bit binary PGM, mapping [0, maxval] linearly onto [0, 1]"""
    data = Path(path).read_bytes()
    (width, height, maxval), offset = _pgm_header(data)
    if width < 1 or height < 1:
        raise FormatError(f"PGM dimensions must be positive, got {width}x{height}")
    if not 0 < maxval <= 65535:
        raise FormatError(f"PGM maxval must be in [1, 65535], got {maxval}")

    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * dtype.itemsize
    raster = data[offset:]
    if len(raster) < expected:
        raise LengthMismatchError(f"PGM payload has {len(raster)} bytes, expected {expected}")
    pixels = np.frombuffer(raster[:expected], dtype=dtype).reshape(height, width)
    return pixels.astype(np.float64) / maxval


def write_image(path: PathLike, image: np.ndarray, bit_depth: int = 16) -> None:
    """Write a binary PGM; values are clipped to [0, 1] and rounded to the nearest level"""
    if bit_depth not in (8, 16):
        raise FormatError(f"bit depth must be 8 or 16, got {bit_depth}")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise FormatError(f"image must be 2-D, got shape {image.shape}")
    maxval = 255 if bit_depth == 8 else 65535
    levels = np.rint(np.clip(image, 0.0, 1.0) * maxval)
    dtype = np.dtype("u1") if bit_depth == 8 else np.dtype(">u2")
    height, width = image.shape
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + levels.astype(dtype).tobytes())


# kernels -----------------------------------------------------------------------

def read_kernel(path: PathLike) -> BlurKernel:
    """
    Read "height width" followed by row-major taps.

    A sum within 1e-6 of one is renormalized; anything further off is an error.
    """
    tokens = Path(path).read_text().split()
    if len(tokens) < 2:
        raise FormatError(f"{path}: kernel file needs two dimension integers")
    try:
        height, width = int(tokens[0]), int(tokens[1])
    except ValueError as exc:
        raise FormatError(f"{path}: kernel dimensions are not integers") from exc
    if height <= 0 or width <= 0:
        raise KernelError(f"{path}: kernel dimensions must be positive, got {height}x{width}")
    values = tokens[2:]
    if len(values) != height * width:
        raise LengthMismatchError(
            f"{path}: expected {height * width} taps, found {len(values)}"
        )
    try:
        taps = np.array([float(v) for v in values]).reshape(height, width)
    except ValueError as exc:
        raise FormatError(f"{path}: kernel taps are not numbers") from exc
    if np.any(taps < -KERNEL_NEGATIVE_TOLERANCE):
        raise KernelError(f"{path}: kernel has negative taps")
    total = taps.sum()
    if abs(total - 1.0) > KERNEL_SUM_TOLERANCE:
        raise KernelError(f"{path}: kernel sums to {total:.9f}, expected 1")
    return BlurKernel.normalized(taps)


def write_kernel(path: PathLike, kernel: BlurKernel) -> None:
    height, width = kernel.shape
    lines = [f"{height} {width}"]
    for row in kernel.taps:
        lines.append(" ".join(f"{value:.17g}" for value in row))
    Path(path).write_text("\n".join(lines) + "\n")


# weight archives ---------------------------------------------------------------

@dataclass
class ArchiveStage:
    gamma: float
    weights: DenoiserWeights


@dataclass
class WeightArchive:
    """Persistent form of a trained pipeline: gamma0 plus one stage per iteration"""
    gamma0: float
    stages: List[ArchiveStage] = field(default_factory=list)
    domain: Domain = Domain.GRADIENT
    z_init: ZInit = ZInit.ZERO
    version: int = ARCHIVE_VERSION

    @property
    def iterations(self) -> int:
        return len(self.stages)

    @property
    def gammas(self) -> List[float]:
        return [stage.gamma for stage in self.stages]


def _validate_archive(archive: WeightArchive, allow_narrow: bool) -> None:
    if archive.version != ARCHIVE_VERSION:
        raise VersionMismatchError(f"unsupported archive version {archive.version}")
    for index, stage in enumerate(archive.stages, start=1):
        try:
            check_standard_architecture(stage.weights, allow_narrow=allow_narrow)
        except ArchitectureMismatchError as exc:
            raise ArchitectureMismatchError(f"stage {index}: {exc}") from exc


def encode_weights(archive: WeightArchive, allow_narrow: bool = False) -> bytes:
    _validate_archive(archive, allow_narrow)
    parts = [
        ARCHIVE_MAGIC,
        struct.pack("<IIII", archive.version, archive.iterations,
                    _DOMAIN_CODES[archive.domain], _ZINIT_CODES[archive.z_init]),
        struct.pack("<d", archive.gamma0),
    ]
    for stage in archive.stages:
        layers = stage.weights.layers
        parts.append(struct.pack("<dI", stage.gamma, len(layers)))
        for layer in layers:
            spec = layer.spec
            name = spec.name.encode("ascii")
            parts.append(struct.pack("<B", len(name)) + name)
            parts.append(struct.pack("<6I", spec.out_channels, spec.in_channels,
                                     spec.kernel_height, spec.kernel_width, spec.stride, spec.pad))
        for layer in layers:
            parts.append(layer.weight.astype("<f8").tobytes())
            parts.append(layer.bias.astype("<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise LengthMismatchError(
                f"archive truncated: need {count} bytes at offset {self.pos}, "
                f"{len(self.data) - self.pos} remain"
            )
        chunk = self.data[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def decode_weights(data: bytes, allow_narrow: bool = False) -> WeightArchive:
    reader = _Reader(data)
    if reader.take(4) != ARCHIVE_MAGIC:
        raise FormatError("not a weight archive (bad magic)")
    version, iterations, domain_code, zinit_code = reader.unpack("<IIII")
    if version != ARCHIVE_VERSION:
        raise VersionMismatchError(f"unsupported archive version {version}")
    domains = {code: domain for domain, code in _DOMAIN_CODES.items()}
    zinits = {code: mode for mode, code in _ZINIT_CODES.items()}
    if domain_code not in domains or zinit_code not in zinits:
        raise FormatError(f"unknown domain/z_init codes {domain_code}/{zinit_code}")
    (gamma0,) = reader.unpack("<d")

    stages = []
    for _ in range(iterations):
        gamma, layer_count = reader.unpack("<dI")
        specs = []
        for _ in range(layer_count):
            (name_len,) = reader.unpack("<B")
            name = reader.take(name_len).decode("ascii")
            out_c, in_c, kh, kw, stride, pad = reader.unpack("<6I")
            specs.append(LayerSpec(name, out_c, in_c, kh, kw, stride, pad))
        layers = []
        for spec in specs:
            weight = reader.floats(int(np.prod(spec.weight_shape))).reshape(spec.weight_shape)
            bias = reader.floats(spec.out_channels)
            layers.append(ConvLayer(spec, weight, bias))
        stages.append(ArchiveStage(gamma, DenoiserWeights(layers)))
    if reader.pos != len(data):
        raise LengthMismatchError(f"{len(data) - reader.pos} trailing bytes after archive payload")

    archive = WeightArchive(gamma0, stages, domains[domain_code], zinits[zinit_code], version)
    _validate_archive(archive, allow_narrow)
    return archive


def save_weights(path: PathLike, archive: WeightArchive, allow_narrow: bool = False) -> None:
    Path(path).write_bytes(encode_weights(archive, allow_narrow))
    logger.debug(f"Saved {archive.iterations}-stage archive to {path}")


def load_weights(path: PathLike, allow_narrow: bool = False) -> WeightArchive:
    return decode_weights(Path(path).read_bytes(), allow_narrow)


# gradient fields ---------------------------------------------------------------

def save_gradients(path: PathLike, grad_h: np.ndarray, grad_w: np.ndarray) -> None:
    if grad_h.shape != grad_w.shape or grad_h.ndim != 2:
        raise FormatError("gradient fields must be 2-D and share a shape")
    height, width = grad_h.shape
    payload = [
        GRADIENT_MAGIC,
        struct.pack("<III", GRADIENT_VERSION, height, width),
        np.asarray(grad_h, dtype="<f8").tobytes(),
        np.asarray(grad_w, dtype="<f8").tobytes(),
    ]
    Path(path).write_bytes(b"".join(payload))


def load_gradients(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(4) != GRADIENT_MAGIC:
        raise FormatError("not a gradient-field dump (bad magic)")
    version, height, width = reader.unpack("<III")
    if version != GRADIENT_VERSION:
        raise VersionMismatchError(f"unsupported gradient dump version {version}")
    grad_h = reader.floats(height * width).reshape(height, width)
    grad_w = reader.floats(height * width).reshape(height, width)
    if reader.pos != len(reader.data):
        raise LengthMismatchError("trailing bytes after gradient payload")
    return grad_h, grad_w


# manifests ---------------------------------------------------------------------

MANIFEST_COLUMNS = ["clean", "kernel", "sigma", "seed", "blurred"]
PAIRS_COLUMNS = ["reference", "restored"]


@dataclass
class DatasetEntry:
    clean_path: Path
    kernel_path: Path
    sigma: float
    seed: int
    blurred_path: Optional[Path] = None


@dataclass
class DatasetManifest:
    entries: List[DatasetEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)


def _relative(path: Path, base: Path) -> str:
    try:
        return str(path.resolve().relative_to(base.resolve()))
    except ValueError:
        return str(path)


def write_manifest(path: PathLike, manifest: DatasetManifest) -> None:
    """Tab-separated lines; paths are stored relative to the manifest directory"""
    path = Path(path)
    base = path.parent
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for entry in manifest.entries:
            writer.writerow([
                _relative(entry.clean_path, base),
                _relative(entry.kernel_path, base),
                repr(float(entry.sigma)),
                str(entry.seed),
                _relative(entry.blurred_path, base) if entry.blurred_path else "",
            ])


def read_manifest(path: PathLike) -> DatasetManifest:
    path = Path(path)
    base = path.parent
    entries = []
    with open(path, newline="") as f:
        rows = list(csv.reader(f, delimiter="\t"))
    if not rows or rows[0][:4] != MANIFEST_COLUMNS[:4]:
        raise FormatError(f"{path}: missing manifest header {MANIFEST_COLUMNS}")
    for line_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) < 4:
            raise FormatError(f"{path}:{line_no}: expected at least 4 fields, got {len(row)}")
        try:
            sigma = float(row[2])
            seed = int(row[3])
        except ValueError as exc:
            raise FormatError(f"{path}:{line_no}: bad sigma/seed") from exc
        if sigma < 0:
            raise FormatError(f"{path}:{line_no}: sigma must be non-negative")
        clean, kernel = base / row[0], base / row[1]
        blurred = base / row[4] if len(row) > 4 and row[4] else None
        for candidate in (clean, kernel):
            if not candidate.exists():
                raise FileNotFoundError(f"{path}:{line_no}: {candidate} does not exist")
        entries.append(DatasetEntry(clean, kernel, sigma, seed, blurred))
    return DatasetManifest(entries)


def read_pairs(path: PathLike) -> List[Tuple[Path, Path]]:
    """Evaluation pairs: reference and restored image paths per line"""
    path = Path(path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f, delimiter="\t"))
    if not rows or rows[0][:2] != PAIRS_COLUMNS:
        raise FormatError(f"{path}: missing pairs header {PAIRS_COLUMNS}")
    pairs = []
    for row in rows[1:]:
        if row:
            pairs.append((path.parent / row[0], path.parent / row[1]))
    return pairs


def write_pairs(path: PathLike, pairs: List[Tuple[Path, Path]]) -> None:
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(PAIRS_COLUMNS)
        for reference, restored in pairs:
            writer.writerow([_relative(reference, path.parent), _relative(restored, path.parent)])
