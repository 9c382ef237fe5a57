"""
Stage-wise training of a complete pipeline.

Each round trains the stage denoisers in order, every stage on the outputs of
the already-trained earlier stages, then learns all gammas end-to-end with
the denoisers frozen.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .blur_model import Observation, SynthesisConfig, blur_synthesize, generate_kernel, quantize, synthetic_scene
from .deconv import DeconvPlan, grad_extract
from .errors import ConfigError, EmptyDatasetError
from .fcnn import (
    DenoiserSample,
    DenoiserTrainResult,
    DenoiserWeights,
    Domain,
    standard_architecture,
    train_denoiser,
)
from .hyper import HyperTrainResult, train_hyper
from .pipeline import PipelineConfig, run_forward
from .recipe_loader import CorpusRecipe, TrainingRecipe

logger = logging.getLogger(__name__)

StageCallback = Callable[[int, int, float], None]


def stage_samples(observations: Sequence[Observation], prefix: PipelineConfig,
                  threads: int = 1) -> List[DenoiserSample]:
    """
    Denoiser training pairs for the stage following `prefix`.

    Gradient domain: the gradients of x^{t-1} against the clean gradients.
    Intensity domain: x^{t-1} against the clean image.
    """
    if not observations:
        raise EmptyDatasetError("no observations to build denoiser samples from")

    def build(obs: Observation) -> DenoiserSample:
        plan = DeconvPlan.build(obs.kernel, *obs.blurred.shape)
        x_prev = run_forward(obs.blurred, plan, prefix).output
        if prefix.domain is Domain.GRADIENT:
            return DenoiserSample(grad_extract(x_prev), grad_extract(obs.clean))
        return DenoiserSample((x_prev,), (obs.clean,))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(build, observations))
    return [build(obs) for obs in observations]


@dataclass
class PipelineTrainResult:
    config: PipelineConfig
    denoisers: List[DenoiserTrainResult] = field(default_factory=list)
    hyper: List[HyperTrainResult] = field(default_factory=list)

    @property
    def losses(self) -> List[Tuple[str, int, float]]:
        """(phase, iteration, loss) rows for the training log"""
        rows = []
        for result in self.denoisers:
            rows.extend((f"denoiser-{result.stage}", i, v) for i, v in enumerate(result.losses))
        for round_index, result in enumerate(self.hyper):
            best = result.best
            rows.extend((f"hyper-{round_index}", i, v) for i, v in enumerate(best.history))
        return rows


def train_pipeline(observations: Sequence[Observation], recipe: TrainingRecipe,
                   initial: Optional[PipelineConfig] = None,
                   train_gammas: bool = True,
                   on_iteration: Optional[StageCallback] = None) -> PipelineTrainResult:
    """
    Alternate denoiser and gamma training for `recipe.rounds` rounds.

    Gammas stay at the recipe's (or `initial`'s) values while the denoisers
    train; weights stay frozen while the gammas train. Later rounds warm-start
    each denoiser from the previous round.
    """
    if not observations:
        raise EmptyDatasetError("pipeline training needs observations")

    if initial is not None:
        gamma0, gammas = initial.gamma0, list(initial.gammas)
        weights: List[DenoiserWeights] = list(initial.weights)
    else:
        gamma0, gammas, weights = recipe.gamma0, list(recipe.gammas), []
    if len(gammas) != recipe.iterations:
        raise ConfigError(f"{len(gammas)} gammas for {recipe.iterations} stages")

    architecture = standard_architecture(recipe.hidden_channels)
    result = PipelineTrainResult(config=PipelineConfig(gamma0=gamma0, domain=recipe.domain,
                                                       z_init=recipe.z_init, monotone=False))

    for round_index in range(recipe.rounds):
        logger.info(f"Round {round_index + 1}/{recipe.rounds}: gammas {[gamma0] + gammas}")
        trained: List[DenoiserWeights] = []
        for stage in range(1, recipe.iterations + 1):
            prefix = PipelineConfig(
                gamma0=gamma0, gammas=gammas[:stage - 1], weights=trained,
                domain=recipe.domain, z_init=recipe.z_init, monotone=False,
            )
            samples = stage_samples(observations, prefix, recipe.threads)
            callback = None
            if on_iteration is not None:
                callback = lambda i, v, s=stage: on_iteration(s, i, v)  # noqa: E731
            warm = weights[stage - 1] if stage - 1 < len(weights) else None
            stage_result = train_denoiser(stage, samples, recipe.denoiser, architecture,
                                          initial=warm, on_iteration=callback)
            trained.append(stage_result.weights)
            result.denoisers.append(stage_result)
        weights = trained

        current = PipelineConfig(gamma0=gamma0, gammas=gammas, weights=weights,
                                 domain=recipe.domain, z_init=recipe.z_init, monotone=False)
        if train_gammas:
            hyper_result = train_hyper(current, observations, recipe.hyper,
                                       initial=current.all_gammas)
            result.hyper.append(hyper_result)
            gamma0, gammas = hyper_result.gammas[0], list(hyper_result.gammas[1:])

    result.config = PipelineConfig(gamma0=gamma0, gammas=gammas, weights=weights,
                                   domain=recipe.domain, z_init=recipe.z_init, monotone=False)
    return result


def build_corpus(corpus: CorpusRecipe, seed: int) -> Tuple[List[Observation], List[Observation]]:
    """
    In-memory training and held-out observations from synthetic scenes.

    Scene i uses kernel i mod K; held-out scenes draw their seeds after the
    training ones so the two sets never share a scene.
    """
    if not corpus.kernel_seeds:
        raise ConfigError("corpus needs at least one kernel seed")
    kernels = [
        generate_kernel(s, corpus.kernel_sizes[i % len(corpus.kernel_sizes)])
        for i, s in enumerate(corpus.kernel_seeds)
    ]
    total = corpus.train_images + corpus.heldout_images
    base = np.random.SeedSequence(seed).generate_state(1, dtype=np.uint64)[0]

    observations = []
    for index in range(total):
        scene = synthetic_scene(int(base) + index, corpus.image_size)
        offset = (corpus.image_size - corpus.patch_size) // 2
        clean = quantize(scene[offset:offset + corpus.patch_size, offset:offset + corpus.patch_size])
        kernel = kernels[index % len(kernels)]
        noise_seed = int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])
        blurred = blur_synthesize(clean, kernel, SynthesisConfig(corpus.noise_sigma, noise_seed))
        observations.append(Observation(clean, kernel, blurred))
    return observations[:corpus.train_images], observations[corpus.train_images:]
