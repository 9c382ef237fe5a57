"""
Iterative deconvolution pipeline.

x^0 = initial deconvolution of y; then for each stage t:
gradients of x^{t-1} -> stage-t denoiser -> deconvolution with the denoised
gradients and gamma_t. The intensity variant denoises x^{t-1} itself and
feeds the gradients of the denoised image to the deconvolution.
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .deconv import DeconvPlan, ZInit, deconv_step, grad_extract, initial_z
from .errors import ConfigError
from .fcnn import DenoiserWeights, Domain, ForwardCache, check_standard_architecture, fcnn_forward
from .image_io import ArchiveStage, WeightArchive, save_gradients, write_image
from .kernel import BlurKernel
from .tensor_fft import as_real_field, transpose

logger = logging.getLogger(__name__)

DEFAULT_ITERATIONS = 3


def is_non_increasing(values: Sequence[float]) -> bool:
    return all(a >= b for a, b in zip(values, values[1:]))


@dataclass
class PipelineConfig:
    gamma0: float
    gammas: List[float] = field(default_factory=list)
    weights: List[DenoiserWeights] = field(default_factory=list)
    domain: Domain = Domain.GRADIENT
    z_init: ZInit = ZInit.ZERO
    dump_intermediates: bool = False
    monotone: bool = True

    def __post_init__(self):
        self.gammas = [float(g) for g in self.gammas]
        if len(self.gammas) != len(self.weights):
            raise ConfigError(
                f"{len(self.gammas)} gammas given for {len(self.weights)} denoiser stages"
            )
        all_gammas = self.all_gammas
        if any(not np.isfinite(g) or g <= 0 for g in all_gammas):
            raise ConfigError(f"every gamma must be positive, got {all_gammas}")
        if self.monotone and not is_non_increasing(all_gammas):
            raise ConfigError(f"gammas must be non-increasing in monotone mode, got {all_gammas}")

    @property
    def iterations(self) -> int:
        return len(self.gammas)

    @property
    def all_gammas(self) -> List[float]:
        """gamma0 followed by the per-stage gammas"""
        return [float(self.gamma0)] + list(self.gammas)

    def with_gammas(self, all_gammas: Sequence[float]) -> "PipelineConfig":
        return PipelineConfig(
            gamma0=all_gammas[0], gammas=list(all_gammas[1:]), weights=self.weights,
            domain=self.domain, z_init=self.z_init,
            dump_intermediates=self.dump_intermediates, monotone=self.monotone,
        )

    def truncated(self, iterations: int) -> "PipelineConfig":
        return PipelineConfig(
            gamma0=self.gamma0, gammas=self.gammas[:iterations], weights=self.weights[:iterations],
            domain=self.domain, z_init=self.z_init,
            dump_intermediates=self.dump_intermediates, monotone=self.monotone,
        )

    def check_architecture(self, allow_narrow: bool = False) -> None:
        for weights in self.weights:
            check_standard_architecture(weights, allow_narrow=allow_narrow)

    @classmethod
    def from_archive(cls, archive: WeightArchive, monotone: bool = True) -> "PipelineConfig":
        return cls(
            gamma0=archive.gamma0,
            gammas=archive.gammas,
            weights=[stage.weights for stage in archive.stages],
            domain=archive.domain,
            z_init=archive.z_init,
            monotone=monotone,
        )

    def to_archive(self) -> WeightArchive:
        return WeightArchive(
            gamma0=self.gamma0,
            stages=[ArchiveStage(g, w) for g, w in zip(self.gammas, self.weights)],
            domain=self.domain,
            z_init=self.z_init,
        )

    def describe(self) -> Dict[str, object]:
        return {
            "iterations": self.iterations,
            "gamma0": self.gamma0,
            "gammas": self.gammas,
            "domain": self.domain.value,
            "z_init": self.z_init.value,
            "monotone": self.monotone,
        }


@dataclass
class StageTrace:
    """Everything one stage computed, kept for backpropagation"""
    x_in: np.ndarray
    denoiser_inputs: Tuple[np.ndarray, ...]
    denoiser_caches: List[ForwardCache]
    denoised: Tuple[np.ndarray, ...]
    z_h: np.ndarray
    z_w: np.ndarray
    x_out: np.ndarray


@dataclass
class PipelineTrace:
    y: np.ndarray
    plan: DeconvPlan
    z0_h: np.ndarray
    z0_w: np.ndarray
    x0: np.ndarray
    stages: List[StageTrace] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.stages[-1].x_out if self.stages else self.x0

    @property
    def images(self) -> List[np.ndarray]:
        return [self.x0] + [stage.x_out for stage in self.stages]


def _denoise_stage(weights: DenoiserWeights, domain: Domain, x_prev: np.ndarray, keep_caches: bool):
    caches: List[ForwardCache] = []

    def apply(field_in: np.ndarray) -> np.ndarray:
        cache = ForwardCache() if keep_caches else None
        out = fcnn_forward(weights, field_in, cache)
        if cache is not None:
            caches.append(cache)
        return out

    if domain is Domain.GRADIENT:
        grad_h, grad_w = grad_extract(x_prev)
        inputs = (grad_h, transpose(grad_w))
        out_h = apply(inputs[0])
        out_w_t = apply(inputs[1])
        z_h, z_w = out_h, transpose(out_w_t)
        return inputs, caches, (out_h, out_w_t), z_h, z_w

    denoised = apply(x_prev)
    z_h, z_w = grad_extract(denoised)
    return (x_prev,), caches, (denoised,), z_h, z_w


def run_forward(y: np.ndarray, plan: DeconvPlan, cfg: PipelineConfig,
                keep_caches: bool = False) -> PipelineTrace:
    """Full forward pass; denoiser caches are kept only when backprop will follow"""
    y = as_real_field(y, "y")
    plan.check_shape(y)
    z0_h, z0_w = initial_z(y, cfg.z_init)
    x = deconv_step(y, plan, z0_h, z0_w, cfg.gamma0)
    trace = PipelineTrace(y=y, plan=plan, z0_h=z0_h, z0_w=z0_w, x0=x)

    for stage, (weights, gamma) in enumerate(zip(cfg.weights, cfg.gammas), start=1):
        inputs, caches, denoised, z_h, z_w = _denoise_stage(weights, cfg.domain, x, keep_caches)
        x_next = deconv_step(y, plan, z_h, z_w, gamma)
        trace.stages.append(StageTrace(x, inputs, caches, denoised, z_h, z_w, x_next))
        logger.debug(f"stage {stage}: gamma {gamma:.6g}, mean |dx| {np.mean(np.abs(x_next - x)):.3e}")
        x = x_next
    return trace


@dataclass
class PipelineResult:
    image: np.ndarray
    intermediates: List[np.ndarray] = field(default_factory=list)
    denoised_gradients: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)


def run_pipeline(y, kernel: BlurKernel, cfg: PipelineConfig,
                 plan: Optional[DeconvPlan] = None) -> PipelineResult:
    """Deblur y with the configured stages; intermediates are filled when dumping is on"""
    y = as_real_field(y, "y")
    if plan is None:
        plan = DeconvPlan.build(kernel, *y.shape)
    trace = run_forward(y, plan, cfg)
    result = PipelineResult(image=trace.output)
    if cfg.dump_intermediates:
        result.intermediates = trace.images
        result.denoised_gradients = [(stage.z_h, stage.z_w) for stage in trace.stages]
    return result


def run_intensity_variant(y, kernel: BlurKernel, cfg: PipelineConfig,
                          plan: Optional[DeconvPlan] = None) -> PipelineResult:
    """Same loop with an intensity-domain denoiser"""
    if cfg.domain is not Domain.INTENSITY:
        raise ConfigError("run_intensity_variant needs a pipeline configured for the intensity domain")
    return run_pipeline(y, kernel, cfg, plan)


def dump_intermediates(result: PipelineResult, out_dir: Union[str, Path]) -> List[Path]:
    """One PGM per stage (initial + refinements); denoised gradients go to gradients/"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for index, image in enumerate(result.intermediates):
        path = out_dir / f"stage_{index}.pgm"
        write_image(path, image)
        written.append(path)
    if result.denoised_gradients:
        grad_dir = out_dir / "gradients"
        grad_dir.mkdir(exist_ok=True)
        for index, (z_h, z_w) in enumerate(result.denoised_gradients, start=1):
            save_gradients(grad_dir / f"stage_{index}.idgf", z_h, z_w)
    return written


class Pipeline:
    """
    Immutable pipeline with a per-(kernel, size) plan cache.

    Several images may be deblurred concurrently; each evaluation is
    independent and results come back in input order.
    """

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self._plans: Dict[Tuple[bytes, Tuple[int, int], Tuple[int, int]], DeconvPlan] = {}
        self._lock = threading.Lock()

    def plan_for(self, kernel: BlurKernel, shape: Tuple[int, int]) -> DeconvPlan:
        key = (kernel.taps.tobytes(), kernel.shape, tuple(shape))
        with self._lock:
            plan = self._plans.get(key)
            if plan is None:
                plan = DeconvPlan.build(kernel, *shape)
                self._plans[key] = plan
        return plan

    def deblur(self, y, kernel: BlurKernel) -> PipelineResult:
        y = as_real_field(y, "y")
        return run_pipeline(y, kernel, self.cfg, self.plan_for(kernel, y.shape))

    def deblur_many(self, items: Sequence[Tuple[np.ndarray, BlurKernel]],
                    threads: int = 1) -> List[PipelineResult]:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return list(pool.map(lambda item: self.deblur(*item), items))
        return [self.deblur(y, kernel) for y, kernel in items]

