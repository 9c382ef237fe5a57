"""
Finite-difference verification of every analytic gradient in the toolkit.

Checks the denoiser backward pass (parameters and input), the gradients of
the deconvolution module with respect to z and gamma, the adjoint identity
of the z gradient, and the full pipeline chain over all gammas.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np

from .blur_model import make_rng
from .deconv import DeconvPlan, ZInit, deconv_step
from .fcnn import (
    Domain,
    ForwardCache,
    fcnn_backward,
    fcnn_forward,
    init_denoiser,
    standard_architecture,
    truncated_architecture,
)
from .hyper import (
    HyperGradientWorkspace,
    backward_gammas,
    grad_wrt_gamma,
    grad_wrt_z,
    loss_hyper,
    loss_subgradient,
)
from .kernel import BlurKernel
from .pipeline import PipelineConfig, run_forward

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4
FD_STEP = 1e-6
GAMMA_STEP = 1e-5


def relative_error(analytic, numeric) -> float:
    """max |a - f| / max |f|; zero when both sides vanish"""
    analytic = np.atleast_1d(np.asarray(analytic, dtype=np.float64))
    numeric = np.atleast_1d(np.asarray(numeric, dtype=np.float64))
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)))
    if scale < 1e-14:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        plus, minus = x.copy(), x.copy()
        plus[index] += step
        minus[index] -= step
        grad[index] = (f(plus) - f(minus)) / (2 * step)
    return grad


@dataclass
class GradCheckReport:
    tolerance: float = DEFAULT_TOLERANCE
    errors: List[Tuple[str, float]] = field(default_factory=list)

    def record(self, name: str, error: float) -> None:
        logger.debug(f"{name}: relative error {error:.3e}")
        self.errors.append((name, error))

    @property
    def max_error(self) -> float:
        return max((e for _, e in self.errors), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for _, e in self.errors)

    def lines(self) -> List[str]:
        return [f"{name}\t{error:.3e}" for name, error in self.errors]


def random_instance(size: int, seed: int) -> Tuple[DeconvPlan, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Random kernel, observation, auxiliary gradients and reference image on a size x size grid"""
    rng = make_rng(seed)
    ksize = 3 if size >= 3 else 1
    kernel = BlurKernel.normalized(rng.random((ksize, ksize)) + 0.1)
    plan = DeconvPlan.build(kernel, size, size)
    y = rng.random((size, size))
    z_h = rng.normal(scale=0.1, size=(size, size))
    z_w = rng.normal(scale=0.1, size=(size, size))
    x0 = rng.random((size, size))
    return plan, y, z_h, z_w, x0


def check_deconv_gradients(size: int, seed: int, report: GradCheckReport) -> None:
    plan, y, z_h, z_w, x0 = random_instance(size, seed)
    gamma = float(make_rng(seed, 1).uniform(0.5, 50.0))

    x = deconv_step(y, plan, z_h, z_w, gamma)
    delta_x = loss_subgradient(x, x0, 1)

    ws = HyperGradientWorkspace.build(plan, y, z_h, z_w, delta_x)
    analytic = grad_wrt_gamma(ws, gamma)
    h = gamma * GAMMA_STEP
    numeric = (loss_hyper(deconv_step(y, plan, z_h, z_w, gamma + h), x0, 1)
               - loss_hyper(deconv_step(y, plan, z_h, z_w, gamma - h), x0, 1)) / (2 * h)
    report.record("deconv.gamma", relative_error(analytic, numeric))

    delta_h, delta_w = grad_wrt_z(plan, gamma, delta_x)
    numeric_h = central_difference(lambda zh: loss_hyper(deconv_step(y, plan, zh, z_w, gamma), x0, 1), z_h)
    numeric_w = central_difference(lambda zw: loss_hyper(deconv_step(y, plan, z_h, zw, gamma), x0, 1), z_w)
    report.record("deconv.z_h", relative_error(delta_h, numeric_h))
    report.record("deconv.z_w", relative_error(delta_w, numeric_w))

    rng = make_rng(seed, 2)
    dz_h, dz_w = rng.normal(size=z_h.shape), rng.normal(size=z_w.shape)
    direction = rng.normal(size=x.shape)
    zeros = np.zeros_like(y)
    dx = deconv_step(zeros, plan, dz_h, dz_w, gamma)
    adj_h, adj_w = grad_wrt_z(plan, gamma, direction)
    lhs = np.sum(adj_h * dz_h) + np.sum(adj_w * dz_w)
    rhs = np.sum(direction * dx)
    report.record("deconv.adjoint", abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))


def check_denoiser_gradients(size: int, seed: int, report: GradCheckReport,
                             n_layers: int = 3, hidden_channels: int = 4) -> None:
    weights = init_denoiser(truncated_architecture(n_layers, hidden_channels), seed)
    rng = make_rng(seed, 3)
    # small positive biases keep most units away from the ReLU kink
    weights = weights.with_parameters([
        p if p.ndim == 4 else rng.uniform(0.05, 0.2, size=p.shape) for p in weights.parameters()
    ])
    g = rng.normal(size=(size, size))
    upstream = rng.normal(size=(size, size))

    cache = ForwardCache()
    fcnn_forward(weights, g, cache)
    grads, input_grad = fcnn_backward(weights, g, upstream, cache)

    def objective(params_index: int) -> Callable[[np.ndarray], float]:
        def f(value: np.ndarray) -> float:
            params = list(weights.parameters())
            params[params_index] = value
            return float(np.sum(upstream * fcnn_forward(weights.with_parameters(params), g)))
        return f

    for index, (param, grad) in enumerate(zip(weights.parameters(), grads.parameters())):
        layer = weights.layers[index // 2].spec.name
        kind = "weight" if index % 2 == 0 else "bias"
        numeric = central_difference(objective(index), param)
        report.record(f"fcnn.{layer}.{kind}", relative_error(grad, numeric))

    numeric_input = central_difference(lambda v: float(np.sum(upstream * fcnn_forward(weights, v))), g)
    report.record("fcnn.input", relative_error(input_grad, numeric_input))


def check_pipeline_gradients(size: int, seed: int, report: GradCheckReport,
                             domain: Domain = Domain.GRADIENT, iterations: int = 2,
                             hidden_channels: int = 4) -> None:
    plan, y, _, _, x0 = random_instance(size, seed)
    stage_seeds = np.random.SeedSequence([seed, 4]).generate_state(iterations)
    weights = [init_denoiser(standard_architecture(hidden_channels), int(s)) for s in stage_seeds]
    gammas = sorted(make_rng(seed, 5).uniform(1.0, 100.0, size=iterations + 1).tolist(), reverse=True)
    cfg = PipelineConfig(gamma0=gammas[0], gammas=gammas[1:], weights=weights,
                         domain=domain, z_init=ZInit.ZERO, monotone=False)

    trace = run_forward(y, plan, cfg, keep_caches=True)
    analytic = backward_gammas(trace, cfg, loss_subgradient(trace.output, x0, 1))

    numeric = np.zeros_like(analytic)
    for index, gamma in enumerate(cfg.all_gammas):
        h = gamma * GAMMA_STEP
        values = []
        for sign in (1.0, -1.0):
            shifted = list(cfg.all_gammas)
            shifted[index] = gamma + sign * h
            values.append(loss_hyper(run_forward(y, plan, cfg.with_gammas(shifted)).output, x0, 1))
        numeric[index] = (values[0] - values[1]) / (2 * h)
    for index in range(len(analytic)):
        report.record(f"pipeline.{domain.value}.gamma{index}", relative_error(analytic[index], numeric[index]))


def run_gradcheck(size: int = 6, seed: int = 0, tolerance: float = DEFAULT_TOLERANCE) -> GradCheckReport:
    """Run every check on seeded instances of the given size"""
    report = GradCheckReport(tolerance=tolerance)
    check_deconv_gradients(size, seed, report)
    check_denoiser_gradients(max(size, 5), seed, report)
    check_pipeline_gradients(max(size, 5), seed, report, Domain.GRADIENT)
    check_pipeline_gradients(max(size, 5), seed, report, Domain.INTENSITY)
    logger.info(f"gradcheck: {len(report.errors)} checks, max relative error {report.max_error:.3e}")
    return report
