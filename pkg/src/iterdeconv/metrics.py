"""
Image quality metrics and tab-separated reports.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from skimage.metrics import structural_similarity

from .errors import FormatError, ShapeMismatchError
from .image_io import read_image, read_pairs

logger = logging.getLogger(__name__)

PSNR_CAP = 100.0
MSE_FLOOR = 1e-10
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
MEAN_ROW = "mean"

PathLike = Union[str, Path]


def _pair(a, b) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"images differ in shape: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ShapeMismatchError(f"expected 2-D images, got shape {a.shape}")
    return a, b


def psnr(a, b) -> float:
    """10 log10(1 / MSE) in dB, capped at 100 for (near) identical images"""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < MSE_FLOOR:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def ssim(a, b) -> float:
    """Mean local SSIM over all fully-contained 11x11 Gaussian windows"""
    a, b = _pair(a, b)
    if min(a.shape) < SSIM_WINDOW:
        raise ShapeMismatchError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    return float(structural_similarity(
        a, b,
        data_range=1.0,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=SSIM_K1,
        K2=SSIM_K2,
    ))


# reports -----------------------------------------------------------------------

def write_report(path: PathLike, columns: Sequence[str], rows: Sequence[Sequence[object]]) -> None:
    """
    Header, one line per row and a final mean row.

    The first column is a label; the mean row averages every other column.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        if rows:
            means = np.mean(np.array([[float(v) for v in row[1:]] for row in rows]), axis=0)
            writer.writerow([MEAN_ROW] + [repr(float(m)) for m in np.atleast_1d(means)])


def read_report(path: PathLike) -> Tuple[List[str], List[Tuple[str, List[float]]], Dict[str, float]]:
    """Inverse of write_report: (columns, rows, means by column)"""
    with open(path, newline="", encoding="utf-8") as f:
        lines = list(csv.reader(f, delimiter="\t"))
    if not lines:
        raise FormatError(f"{path}: empty report")
    columns, body = lines[0], lines[1:]
    rows: List[Tuple[str, List[float]]] = []
    means: Dict[str, float] = {}
    for number, line in enumerate(body, start=2):
        if len(line) != len(columns):
            raise FormatError(f"{path}:{number}: expected {len(columns)} fields, got {len(line)}")
        try:
            values = [float(v) for v in line[1:]]
        except ValueError as e:
            raise FormatError(f"{path}:{number}: {e}") from e
        if line[0] == MEAN_ROW:
            means = dict(zip(columns[1:], values))
        else:
            rows.append((line[0], values))
    return columns, rows, means


@dataclass
class MetricReport:
    """Per-image PSNR and SSIM with their means"""
    names: List[str] = field(default_factory=list)
    psnrs: List[float] = field(default_factory=list)
    ssims: List[float] = field(default_factory=list)

    COLUMNS = ("image", "psnr", "ssim")

    def add(self, name: str, reference, restored) -> None:
        self.names.append(name)
        self.psnrs.append(psnr(restored, reference))
        self.ssims.append(ssim(restored, reference))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnrs)) if self.psnrs else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssims)) if self.ssims else float("nan")

    def write(self, path: PathLike) -> None:
        write_report(path, self.COLUMNS, list(zip(self.names, self.psnrs, self.ssims)))

    @classmethod
    def read(cls, path: PathLike) -> "MetricReport":
        columns, rows, _ = read_report(path)
        if tuple(columns) != cls.COLUMNS:
            raise FormatError(f"{path}: expected columns {cls.COLUMNS}, got {tuple(columns)}")
        return cls(
            names=[name for name, _ in rows],
            psnrs=[values[0] for _, values in rows],
            ssims=[values[1] for _, values in rows],
        )


def evaluate_pairs(pairs_path: PathLike) -> MetricReport:
    """Score every (reference, restored) PGM pair listed in a pairs manifest"""
    report = MetricReport()
    for reference, restored in read_pairs(pairs_path):
        report.add(restored.name, read_image(reference), read_image(restored))
    logger.info(
        f"Evaluated {len(report.names)} pairs: mean PSNR {report.mean_psnr:.2f} dB, "
        f"mean SSIM {report.mean_ssim:.4f}"
    )
    return report
