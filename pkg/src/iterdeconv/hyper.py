"""
End-to-end learning of the deconvolution hyper-parameters with frozen denoisers.

The loss is the mean L1 distance between the final deconvolution output and
the clean image. Gradients flow analytically through every deconvolution
module (to its gamma and to its auxiliary gradients z), through the frozen
denoisers and the gradient extraction, back to the initial module.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .blur_model import Observation
from .deconv import DENOMINATOR_GUARD, DeconvPlan, grad_extract_adjoint
from .errors import ConfigError, EmptyDatasetError, ShapeMismatchError
from .fcnn import Domain, fcnn_backward
from .pipeline import PipelineConfig, PipelineTrace, run_forward
from .tensor_fft import fft2, ifft2, transpose

logger = logging.getLogger(__name__)

GAMMA_FLOOR = 1e-6
INIT_RANGE = (10.0, 1e4)


def loss_hyper(x, x0, n: int) -> float:
    """(1/N) * ||x - x0||_1"""
    x = np.asarray(x, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if x.shape != x0.shape:
        raise ShapeMismatchError(f"output {x.shape} and reference {x0.shape} differ")
    if n < 1:
        raise ConfigError(f"N must be at least 1, got {n}")
    return float(np.abs(x - x0).sum() / n)


def loss_subgradient(x, x0, n: int) -> np.ndarray:
    """sign(x - x0) / N, zero where the residual is exactly zero"""
    return np.sign(np.asarray(x, dtype=np.float64) - np.asarray(x0, dtype=np.float64)) / n


@dataclass
class HyperGradientWorkspace:
    """
    Spectra for the gamma gradient of one deconvolution module.

    D = conj(F(k)) F(y), E = sum_l conj(F(p_l)) F(z_l); G and H come from the
    plan; delta_x is the loss sensitivity to the module output.
    """
    D: np.ndarray
    E: np.ndarray
    G: np.ndarray
    H: np.ndarray
    delta_x: np.ndarray

    @classmethod
    def build(cls, plan: DeconvPlan, y: np.ndarray, z_h: np.ndarray, z_w: np.ndarray,
              delta_x: np.ndarray) -> "HyperGradientWorkspace":
        plan.check_shape(delta_x)
        return cls(plan.data_spectrum(y), plan.prior_spectrum(z_h, z_w), plan.G, plan.H, delta_x)


def grad_wrt_gamma(ws: HyperGradientWorkspace, gamma: float) -> float:
    """
    dL/dgamma = < F^-1((D (H + eps) - E G) / (gamma G + H + eps)^2), delta_x >.

    The guard eps enters exactly as in the forward solve so the value is the
    derivative of the implemented map.
    """
    H = ws.H + DENOMINATOR_GUARD
    derivative = ifft2((ws.D * H - ws.E * ws.G) / (gamma * ws.G + H) ** 2)
    return float(np.sum(derivative * ws.delta_x))


def grad_wrt_z(plan: DeconvPlan, gamma: float, delta_x) -> Tuple[np.ndarray, np.ndarray]:
    """Adjoint of the deconvolution map z_l -> x: F^-1(F(p_l) F(delta_x) / (gamma G + H))"""
    delta_x = np.asarray(delta_x, dtype=np.float64)
    plan.check_shape(delta_x)
    spectrum = fft2(delta_x) / plan.denominator(gamma)
    return ifft2(plan.otf_h * spectrum), ifft2(plan.otf_w * spectrum)


def backward_gammas(trace: PipelineTrace, cfg: PipelineConfig, delta_out: np.ndarray) -> np.ndarray:
    """Gradient of the loss with respect to (gamma0, gamma_1, ..., gamma_T)"""
    plan, y = trace.plan, trace.y
    grads = np.zeros(cfg.iterations + 1)
    delta = delta_out
    for t in range(cfg.iterations - 1, -1, -1):
        stage = trace.stages[t]
        gamma = cfg.gammas[t]
        ws = HyperGradientWorkspace.build(plan, y, stage.z_h, stage.z_w, delta)
        grads[t + 1] = grad_wrt_gamma(ws, gamma)

        delta_z_h, delta_z_w = grad_wrt_z(plan, gamma, delta)
        weights = cfg.weights[t]
        caches = stage.denoiser_caches or [None] * len(stage.denoiser_inputs)
        if cfg.domain is Domain.GRADIENT:
            _, delta_g_h = fcnn_backward(weights, stage.denoiser_inputs[0], delta_z_h,
                                         caches[0], input_only=True)
            _, delta_g_w_t = fcnn_backward(weights, stage.denoiser_inputs[1], transpose(delta_z_w),
                                           caches[1], input_only=True)
            delta = grad_extract_adjoint(delta_g_h, transpose(delta_g_w_t))
        else:
            delta_u = grad_extract_adjoint(delta_z_h, delta_z_w)
            _, delta = fcnn_backward(weights, stage.denoiser_inputs[0], delta_u,
                                     caches[0], input_only=True)

    ws0 = HyperGradientWorkspace.build(plan, y, trace.z0_h, trace.z0_w, delta)
    grads[0] = grad_wrt_gamma(ws0, cfg.gamma0)
    return grads


def project_non_increasing(values: Sequence[float]) -> List[float]:
    """Euclidean projection onto non-increasing sequences (pool adjacent violators)"""
    blocks: List[List[float]] = []
    for value in values:
        blocks.append([float(value), 1.0])
        while len(blocks) > 1 and blocks[-2][0] / blocks[-2][1] < blocks[-1][0] / blocks[-1][1]:
            total, count = blocks.pop()
            blocks[-1][0] += total
            blocks[-1][1] += count
    projected: List[float] = []
    for total, count in blocks:
        projected.extend([total / count] * int(count))
    return projected


def random_gammas(count: int, rng: np.random.Generator,
                  low: float = INIT_RANGE[0], high: float = INIT_RANGE[1]) -> List[float]:
    """Log-uniform draws sorted so later modules get smaller values"""
    draws = np.exp(rng.uniform(np.log(low), np.log(high), size=count))
    return sorted(draws.tolist(), reverse=True)


@dataclass
class HyperTrainConfig:
    lr_last: float = 10.0
    lr_other: float = 10000.0
    momentum: float = 0.95
    iterations: int = 50
    seed: int = 0
    monotone_projection: bool = True
    restarts: int = 4
    batch_size: Optional[int] = None
    threads: int = 1
    log_every: int = 10

    def __post_init__(self):
        if self.lr_last <= 0 or self.lr_other <= 0:
            raise ConfigError("hyper-parameter learning rates must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.restarts < 1:
            raise ConfigError(f"restarts must be at least 1, got {self.restarts}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be non-negative, got {self.iterations}")

    def learning_rates(self, count: int) -> np.ndarray:
        rates = np.full(count, self.lr_other)
        rates[-1] = self.lr_last
        return rates


@dataclass
class RestartOutcome:
    restart: int
    initial: List[float]
    final: List[float]
    loss: float
    history: List[float] = field(default_factory=list)


@dataclass
class HyperTrainResult:
    gammas: List[float]
    loss: float
    restarts: List[RestartOutcome]

    @property
    def best(self) -> RestartOutcome:
        return min(self.restarts, key=lambda r: (r.loss, r.restart))


def dataset_loss(cfg: PipelineConfig, observations: Sequence[Observation],
                 plans: Optional[Sequence[DeconvPlan]] = None) -> float:
    """Mean L1 loss of the pipeline output over a set of observations"""
    if not observations:
        raise EmptyDatasetError("no observations")
    plans = plans or [DeconvPlan.build(o.kernel, *o.blurred.shape) for o in observations]
    total = 0.0
    for obs, plan in zip(observations, plans):
        total += loss_hyper(run_forward(obs.blurred, plan, cfg).output, obs.clean, len(observations))
    return total


def loss_and_gamma_gradient(cfg: PipelineConfig, observations: Sequence[Observation],
                            plans: Sequence[DeconvPlan], threads: int = 1) -> Tuple[float, np.ndarray]:
    """Batch loss and its gradient; per-sample results are summed in input order"""
    n = len(observations)

    def work(item):
        obs, plan = item
        trace = run_forward(obs.blurred, plan, cfg, keep_caches=True)
        value = loss_hyper(trace.output, obs.clean, n)
        grads = backward_gammas(trace, cfg, loss_subgradient(trace.output, obs.clean, n))
        return value, grads

    items = list(zip(observations, plans))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(item) for item in items]

    total = 0.0
    grads = np.zeros(cfg.iterations + 1)
    for value, sample_grads in results:
        total += value
        grads = grads + sample_grads
    return total, grads


def _sgd_gammas(base: PipelineConfig, observations: Sequence[Observation],
                plans: Sequence[DeconvPlan], initial: Sequence[float],
                cfg: HyperTrainConfig, rng: np.random.Generator, restart: int) -> RestartOutcome:
    gammas = np.array(initial, dtype=np.float64)
    velocity = np.zeros_like(gammas)
    rates = cfg.learning_rates(len(gammas))
    history: List[float] = []

    for iteration in range(cfg.iterations):
        if cfg.batch_size and cfg.batch_size < len(observations):
            picks = rng.choice(len(observations), size=cfg.batch_size, replace=False)
            batch = [observations[i] for i in picks]
            batch_plans = [plans[i] for i in picks]
        else:
            batch, batch_plans = list(observations), list(plans)

        current = base.with_gammas(gammas.tolist())
        value, grads = loss_and_gamma_gradient(current, batch, batch_plans, cfg.threads)
        history.append(value)

        velocity = cfg.momentum * velocity - rates * grads
        gammas = gammas + velocity
        if np.any(gammas <= 0):
            logger.warning(
                f"restart {restart} iteration {iteration}: non-positive gamma {gammas.tolist()}, "
                f"clamping to {GAMMA_FLOOR}"
            )
            gammas = np.maximum(gammas, GAMMA_FLOOR)
        if cfg.monotone_projection:
            gammas = np.array(project_non_increasing(gammas))
        if cfg.log_every and (iteration % cfg.log_every == 0 or iteration == cfg.iterations - 1):
            logger.info(f"restart {restart} iteration {iteration}: loss {value:.6f} gammas {gammas.tolist()}")

    final = gammas.tolist()
    loss = dataset_loss(base.with_gammas(final), observations, plans)
    return RestartOutcome(restart, list(initial), final, loss, history)


def train_hyper(base: PipelineConfig, observations: Sequence[Observation], cfg: HyperTrainConfig,
                initial: Optional[Sequence[float]] = None) -> HyperTrainResult:
    """
    SGD with momentum over (gamma0, ..., gamma_T) with the denoisers frozen.

    Restart 0 starts from `initial` when given; every other restart draws a
    random log-uniform, non-increasing start. The restart with the lowest
    final loss on the whole dataset wins; ties go to the earlier restart.
    """
    if not observations:
        raise EmptyDatasetError("hyper-parameter training needs at least one observation")
    base = PipelineConfig(
        gamma0=base.gamma0, gammas=base.gammas, weights=base.weights, domain=base.domain,
        z_init=base.z_init, monotone=False,
    )
    plans = [DeconvPlan.build(o.kernel, *o.blurred.shape) for o in observations]
    count = base.iterations + 1

    outcomes = []
    for restart in range(cfg.restarts):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, restart])))
        if restart == 0 and initial is not None:
            start = [float(g) for g in initial]
            if len(start) != count:
                raise ConfigError(f"expected {count} initial gammas, got {len(start)}")
        else:
            start = random_gammas(count, rng)
        outcome = _sgd_gammas(base, observations, plans, start, cfg, rng, restart)
        logger.info(f"restart {restart}: loss {outcome.loss:.6f} gammas {outcome.final}")
        outcomes.append(outcome)

    result = HyperTrainResult(gammas=[], loss=0.0, restarts=outcomes)
    best = result.best
    result.gammas, result.loss = best.final, best.loss
    return result


def tune_gamma0(observations: Sequence[Observation], candidates: Sequence[float],
                base: Optional[PipelineConfig] = None) -> Tuple[float, List[float]]:
    """Grid search for the initial-deconvolution gamma alone; returns the best and all losses"""
    if not candidates:
        raise ConfigError("no gamma candidates")
    template = base.truncated(0) if base is not None else PipelineConfig(gamma0=1.0)
    plans = [DeconvPlan.build(o.kernel, *o.blurred.shape) for o in observations]
    losses = [
        dataset_loss(PipelineConfig(gamma0=g, z_init=template.z_init, monotone=False), observations, plans)
        for g in candidates
    ]
    best = int(np.argmin(losses))
    return float(candidates[best]), losses
