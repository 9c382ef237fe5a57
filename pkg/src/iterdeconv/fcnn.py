"""
Gradient-domain denoiser: a six-layer fully convolutional network.

Forward inference, exact reverse-mode gradients, L1/L2 losses, Xavier
initialization and mini-batch SGD with momentum, all on numpy arrays.
Feature maps are (channels, height, width); convolutions are stride-1
cross-correlations with zero padding that preserves spatial size.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ArchitectureMismatchError,
    ConfigError,
    EmptyDatasetError,
    ShapeMismatchError,
)
from .tensor_fft import transpose

logger = logging.getLogger(__name__)

STANDARD_HIDDEN_CHANNELS = 64
MIN_INPUT_SIZE = 5


class Domain(Enum):
    """Signal the denoiser operates on"""
    GRADIENT = "gradient"
    INTENSITY = "intensity"


class Loss(Enum):
    L1 = "l1"
    L2 = "l2"

    def value_of(self, residual: np.ndarray, n: int) -> float:
        if self is Loss.L1:
            return float(np.abs(residual).sum() / n)
        return float((residual ** 2).sum() / n)

    def gradient(self, residual: np.ndarray, n: int) -> np.ndarray:
        # np.sign gives 0 at an exact zero residual
        if self is Loss.L1:
            return np.sign(residual) / n
        return 2.0 * residual / n


@dataclass(frozen=True)
class LayerSpec:
    name: str
    out_channels: int
    in_channels: int
    kernel_height: int
    kernel_width: int
    stride: int = 1
    pad: int = 0

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_height, self.kernel_width)


def standard_architecture(hidden_channels: int = STANDARD_HIDDEN_CHANNELS) -> List[LayerSpec]:
    """conv1 5x5 pad 2, conv2-5 3x3 pad 1, conv6 3x3 pad 1 to one channel"""
    specs = [LayerSpec("conv1", hidden_channels, 1, 5, 5, 1, 2)]
    for idx in range(2, 6):
        specs.append(LayerSpec(f"conv{idx}", hidden_channels, hidden_channels, 3, 3, 1, 1))
    specs.append(LayerSpec("conv6", 1, hidden_channels, 3, 3, 1, 1))
    return specs


def truncated_architecture(n_layers: int, hidden_channels: int) -> List[LayerSpec]:
    """First n_layers - 1 hidden layers followed by the output layer"""
    if n_layers < 1 or n_layers > 6:
        raise ConfigError(f"n_layers must be within [1, 6], got {n_layers}")
    full = standard_architecture(hidden_channels)
    if n_layers == 1:
        return [LayerSpec("conv1", 1, 1, 5, 5, 1, 2)]
    return full[: n_layers - 1] + [full[-1]]


@dataclass
class ConvLayer:
    spec: LayerSpec
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.shape != self.spec.weight_shape:
            raise ArchitectureMismatchError(
                f"{self.spec.name}: weight shape {self.weight.shape} != {self.spec.weight_shape}"
            )
        if self.bias.shape != (self.spec.out_channels,):
            raise ArchitectureMismatchError(
                f"{self.spec.name}: bias shape {self.bias.shape} != ({self.spec.out_channels},)"
            )
        if self.spec.stride != 1:
            raise ArchitectureMismatchError(f"{self.spec.name}: only stride 1 is supported")
        if (2 * self.spec.pad != self.spec.kernel_height - 1
                or 2 * self.spec.pad != self.spec.kernel_width - 1):
            raise ArchitectureMismatchError(
                f"{self.spec.name}: pad {self.spec.pad} does not preserve size for "
                f"{self.spec.kernel_height}x{self.spec.kernel_width}"
            )

    def copy(self) -> "ConvLayer":
        return ConvLayer(self.spec, self.weight.copy(), self.bias.copy())


@dataclass
class DenoiserWeights:
    """Ordered conv layers; ReLU follows every layer except the last"""

    layers: List[ConvLayer]

    def __post_init__(self):
        if not self.layers:
            raise ArchitectureMismatchError("denoiser needs at least one layer")
        if self.layers[0].spec.in_channels != 1 or self.layers[-1].spec.out_channels != 1:
            raise ArchitectureMismatchError("denoiser must map one channel to one channel")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if prev.spec.out_channels != cur.spec.in_channels:
                raise ArchitectureMismatchError(
                    f"{prev.spec.name} emits {prev.spec.out_channels} channels but "
                    f"{cur.spec.name} expects {cur.spec.in_channels}"
                )

    @property
    def specs(self) -> List[LayerSpec]:
        return [layer.spec for layer in self.layers]

    def parameters(self) -> List[np.ndarray]:
        params = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
        return params

    def copy(self) -> "DenoiserWeights":
        return DenoiserWeights([layer.copy() for layer in self.layers])

    def zeros_like(self) -> "DenoiserWeights":
        return DenoiserWeights([
            ConvLayer(layer.spec, np.zeros_like(layer.weight), np.zeros_like(layer.bias))
            for layer in self.layers
        ])

    def with_parameters(self, params: Sequence[np.ndarray]) -> "DenoiserWeights":
        if len(params) != 2 * len(self.layers):
            raise ShapeMismatchError("parameter list does not match the layer list")
        return DenoiserWeights([
            ConvLayer(layer.spec, params[2 * i], params[2 * i + 1])
            for i, layer in enumerate(self.layers)
        ])


def check_standard_architecture(weights: DenoiserWeights, allow_narrow: bool = False) -> None:
    """Raise unless the layer list is exactly the six-layer architecture"""
    hidden = weights.layers[0].spec.out_channels
    if not allow_narrow and hidden != STANDARD_HIDDEN_CHANNELS:
        raise ArchitectureMismatchError(
            f"hidden width {hidden} differs from {STANDARD_HIDDEN_CHANNELS}"
        )
    expected = standard_architecture(hidden)
    if len(weights.layers) != len(expected):
        raise ArchitectureMismatchError(
            f"expected {len(expected)} layers, got {len(weights.layers)}"
        )
    for want, got in zip(expected, weights.specs):
        if want != got:
            raise ArchitectureMismatchError(f"layer {got} does not match {want}")


# forward / backward ------------------------------------------------------------

@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations kept for the backward pass"""
    inputs: List[np.ndarray] = field(default_factory=list)
    preacts: List[np.ndarray] = field(default_factory=list)


def _windows(features: np.ndarray, spec: LayerSpec) -> np.ndarray:
    pad = spec.pad
    padded = np.pad(features, ((0, 0), (pad, pad), (pad, pad)))
    return sliding_window_view(padded, (spec.kernel_height, spec.kernel_width), axis=(1, 2))


def conv_forward(features: np.ndarray, layer: ConvLayer) -> np.ndarray:
    windows = _windows(features, layer.spec)
    out = np.tensordot(layer.weight, windows, axes=([1, 2, 3], [0, 3, 4]))
    return out + layer.bias[:, None, None]


def _check_input(g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2:
        raise ShapeMismatchError(f"denoiser input must be 2-D, got shape {g.shape}")
    if g.shape[0] < MIN_INPUT_SIZE or g.shape[1] < MIN_INPUT_SIZE:
        raise ShapeMismatchError(
            f"denoiser input must be at least {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}, got {g.shape}"
        )
    return g


def fcnn_forward(weights: DenoiserWeights, g, cache: Optional[ForwardCache] = None) -> np.ndarray:
    """Apply the network to a single-channel field; output has the input's size"""
    features = _check_input(g)[None]
    last = len(weights.layers) - 1
    for idx, layer in enumerate(weights.layers):
        pre = conv_forward(features, layer)
        if cache is not None:
            cache.inputs.append(features)
            cache.preacts.append(pre)
        features = pre if idx == last else np.maximum(pre, 0.0)
    return features[0]


def fcnn_backward(weights: DenoiserWeights, g, upstream,
                  cache: Optional[ForwardCache] = None,
                  input_only: bool = False) -> Tuple[Optional[DenoiserWeights], np.ndarray]:
    """
    Reverse-mode gradients of <upstream, fcnn_forward(g)> for all parameters and g.

    With input_only the parameter gradients are skipped and None is returned
    in their place.
    """
    g = _check_input(g)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != g.shape:
        raise ShapeMismatchError(f"upstream {upstream.shape} does not match output {g.shape}")
    if cache is None:
        cache = ForwardCache()
        fcnn_forward(weights, g, cache)

    height, width = g.shape
    grad = upstream[None]
    grads: List[ConvLayer] = []
    last = len(weights.layers) - 1
    for idx in range(last, -1, -1):
        layer = weights.layers[idx]
        spec = layer.spec
        if idx != last:
            grad = grad * (cache.preacts[idx] > 0.0)

        if not input_only:
            grad_bias = grad.sum(axis=(1, 2))
            grad_weight = np.tensordot(grad, _windows(cache.inputs[idx], spec), axes=([1, 2], [1, 2]))
            grads.append(ConvLayer(spec, grad_weight, grad_bias))

        pad = spec.pad
        grad_padded = np.zeros((spec.in_channels, height + 2 * pad, width + 2 * pad))
        for a in range(spec.kernel_height):
            for b in range(spec.kernel_width):
                grad_padded[:, a:a + height, b:b + width] += np.tensordot(
                    layer.weight[:, :, a, b], grad, axes=([0], [0])
                )
        grad = grad_padded[:, pad:pad + height, pad:pad + width]

    if input_only:
        return None, grad[0]
    grads.reverse()
    return DenoiserWeights(grads), grad[0]


def denoise_gradients(weights: DenoiserWeights, grad_h, grad_w) -> Tuple[np.ndarray, np.ndarray]:
    """Horizontal field directly; vertical field through the transpose trick"""
    out_h = fcnn_forward(weights, grad_h)
    out_w = transpose(fcnn_forward(weights, transpose(np.asarray(grad_w, dtype=np.float64))))
    return out_h, out_w


def l1_loss(pred_h, pred_w, true_h, true_w, n: int) -> float:
    """(1/N) * sum over samples of ||pred_h - true_h||_1 + ||pred_w - true_w||_1"""
    return _paired_loss(Loss.L1, pred_h, pred_w, true_h, true_w, n)


def l2_loss(pred_h, pred_w, true_h, true_w, n: int) -> float:
    return _paired_loss(Loss.L2, pred_h, pred_w, true_h, true_w, n)


def _paired_loss(loss: Loss, pred_h, pred_w, true_h, true_w, n: int) -> float:
    arrays = [np.asarray(a, dtype=np.float64) for a in (pred_h, pred_w, true_h, true_w)]
    if len({a.shape for a in arrays}) != 1:
        raise ShapeMismatchError("prediction and target shapes differ")
    if n < 1:
        raise ConfigError(f"N must be at least 1, got {n}")
    pred_h, pred_w, true_h, true_w = arrays
    return loss.value_of(pred_h - true_h, n) + loss.value_of(pred_w - true_w, n)


# initialization and optimization ----------------------------------------------

def xavier_init(spec: LayerSpec, seed: int) -> ConvLayer:
    """Uniform on +-sqrt(6 / (fan_in + fan_out)) with zero biases"""
    fan_in = spec.in_channels * spec.kernel_height * spec.kernel_width
    fan_out = spec.out_channels * spec.kernel_height * spec.kernel_width
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.Generator(np.random.PCG64(seed))
    weight = rng.uniform(-bound, bound, size=spec.weight_shape)
    return ConvLayer(spec, weight, np.zeros(spec.out_channels))


def init_denoiser(architecture: Sequence[LayerSpec], seed: int) -> DenoiserWeights:
    seeds = np.random.SeedSequence(seed).spawn(len(architecture))
    return DenoiserWeights([
        xavier_init(spec, int(child.generate_state(1, dtype=np.uint64)[0]))
        for spec, child in zip(architecture, seeds)
    ])


def identity_weights(hidden_channels: int = STANDARD_HIDDEN_CHANNELS) -> DenoiserWeights:
    """
    Standard-architecture weights whose forward map is exactly the identity.

    Channel 0 carries relu(g), channel 1 carries relu(-g); the last layer
    returns their difference.
    """
    if hidden_channels < 2:
        raise ConfigError("identity weights need at least two hidden channels")
    layers = []
    for spec in standard_architecture(hidden_channels):
        weight = np.zeros(spec.weight_shape)
        ch, cw = spec.kernel_height // 2, spec.kernel_width // 2
        if spec.name == "conv1":
            weight[0, 0, ch, cw] = 1.0
            weight[1, 0, ch, cw] = -1.0
        elif spec.name == "conv6":
            weight[0, 0, ch, cw] = 1.0
            weight[0, 1, ch, cw] = -1.0
        else:
            weight[0, 0, ch, cw] = 1.0
            weight[1, 1, ch, cw] = 1.0
        layers.append(ConvLayer(spec, weight, np.zeros(spec.out_channels)))
    return DenoiserWeights(layers)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.95
    batch_size: int = 16
    iterations: int = 200
    seed: int = 0
    loss: Loss = Loss.L1
    log_every: int = 10
    threads: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be non-negative, got {self.iterations}")
        if self.threads < 1:
            raise ConfigError(f"threads must be at least 1, got {self.threads}")


def sgd_step(weights: DenoiserWeights, gradients: DenoiserWeights,
             velocity: DenoiserWeights, cfg: TrainConfig) -> Tuple[DenoiserWeights, DenoiserWeights]:
    """Classical momentum: v <- m v - lr g; w <- w + v"""
    new_velocity = [
        cfg.momentum * v - cfg.learning_rate * g
        for v, g in zip(velocity.parameters(), gradients.parameters())
    ]
    new_params = [w + v for w, v in zip(weights.parameters(), new_velocity)]
    return weights.with_parameters(new_params), velocity.with_parameters(new_velocity)


# training ----------------------------------------------------------------------

@dataclass
class DenoiserSample:
    """
    One training pair.

    Gradient domain: inputs (g_h, g_w), targets (clean_h, clean_w).
    Intensity domain: inputs (x,), targets (x0,).
    """
    inputs: Tuple[np.ndarray, ...]
    targets: Tuple[np.ndarray, ...]


@dataclass
class DenoiserTrainResult:
    stage: int
    weights: DenoiserWeights
    losses: List[float]


def sample_loss_and_gradients(weights: DenoiserWeights, sample: DenoiserSample,
                              n: int, loss: Loss = Loss.L1) -> Tuple[float, DenoiserWeights]:
    """
    Loss contribution of one sample (already divided by N) and its parameter
    gradients. A two-field sample runs the vertical field through the
    transpose trick so both orientations share weights.
    """
    total = 0.0
    accumulated: Optional[List[np.ndarray]] = None
    for orientation, (inp, target) in enumerate(zip(sample.inputs, sample.targets)):
        if orientation == 1:
            inp, target = transpose(inp), transpose(target)
        cache = ForwardCache()
        pred = fcnn_forward(weights, inp, cache)
        residual = pred - target
        total += loss.value_of(residual, n)
        grads, _ = fcnn_backward(weights, inp, loss.gradient(residual, n), cache)
        params = grads.parameters()
        accumulated = params if accumulated is None else [a + p for a, p in zip(accumulated, params)]
    return total, weights.with_parameters(accumulated)


def batch_loss_and_gradients(weights: DenoiserWeights, batch: Sequence[DenoiserSample],
                             loss: Loss = Loss.L1, threads: int = 1) -> Tuple[float, DenoiserWeights]:
    """Sum over the batch in sample order, whatever the thread count"""
    n = len(batch)

    def work(sample: DenoiserSample):
        return sample_loss_and_gradients(weights, sample, n, loss)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, batch))
    else:
        results = [work(sample) for sample in batch]

    total = 0.0
    params = [np.zeros_like(p) for p in weights.parameters()]
    for value, grads in results:
        total += value
        params = [a + g for a, g in zip(params, grads.parameters())]
    return total, weights.with_parameters(params)


def evaluate_loss(weights: DenoiserWeights, samples: Sequence[DenoiserSample],
                  loss: Loss = Loss.L1) -> float:
    """Mean per-sample loss over a corpus, without gradients"""
    if not samples:
        raise EmptyDatasetError("no samples to evaluate")
    total = 0.0
    for sample in samples:
        for orientation, (inp, target) in enumerate(zip(sample.inputs, sample.targets)):
            if orientation == 1:
                inp, target = transpose(inp), transpose(target)
            total += loss.value_of(fcnn_forward(weights, inp) - target, len(samples))
    return total


def train_denoiser(stage: int, samples: Sequence[DenoiserSample], cfg: TrainConfig,
                   architecture: Optional[Sequence[LayerSpec]] = None,
                   initial: Optional[DenoiserWeights] = None,
                   on_iteration: Optional[Callable[[int, float], None]] = None) -> DenoiserTrainResult:
    """
    Mini-batch SGD on the denoiser loss for one pipeline stage.

    Samples for stage t must already hold the gradients of the stage-t
    deconvolution outputs produced with the earlier stages frozen.
    """
    if not samples:
        raise EmptyDatasetError(f"stage {stage}: no training samples")

    if initial is not None:
        weights = initial.copy()
    else:
        weights = init_denoiser(architecture or standard_architecture(), cfg.seed)
    velocity = weights.zeros_like()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, stage])))

    losses: List[float] = []
    batch_size = cfg.batch_size
    logger.info(
        f"Training stage {stage} denoiser on {len(samples)} samples "
        f"({cfg.iterations} iterations, batch {batch_size}, loss {cfg.loss.value})"
    )
    for iteration in range(cfg.iterations):
        indices = rng.choice(len(samples), size=batch_size, replace=batch_size > len(samples))
        batch = [samples[i] for i in indices]
        value, grads = batch_loss_and_gradients(weights, batch, cfg.loss, cfg.threads)
        weights, velocity = sgd_step(weights, grads, velocity, cfg)
        losses.append(value)
        if on_iteration is not None:
            on_iteration(iteration, value)
        if cfg.log_every and (iteration % cfg.log_every == 0 or iteration == cfg.iterations - 1):
            logger.info(f"stage {stage} iteration {iteration}: loss {value:.6f}")

    return DenoiserTrainResult(stage=stage, weights=weights, losses=losses)
