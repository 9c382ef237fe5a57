"""
Desk-scale ablation studies.

domain      gradient-domain vs intensity-domain denoisers
loss        L1 vs L2 denoiser training, compared on the common L1 objective
iterations  initial deconvolution vs one stage vs the full pipeline
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from .blur_model import Observation
from .deconv import DeconvPlan
from .errors import EmptyDatasetError
from .fcnn import Domain, Loss, evaluate_loss
from .metrics import psnr, ssim, write_report
from .pipeline import PipelineConfig, run_forward
from .recipe_loader import TrainingRecipe
from .training import PipelineTrainResult, stage_samples, train_pipeline

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("variant", "psnr", "ssim", "l1_objective", "own_loss")
TAIL = 10


class Experiment(Enum):
    DOMAIN = "domain"
    LOSS = "loss"
    ITERATIONS = "iterations"


@dataclass
class AblationRow:
    variant: str
    psnr: float
    ssim: float
    l1_objective: float = float("nan")
    own_loss: float = float("nan")

    def as_row(self) -> Tuple[str, float, float, float, float]:
        return (self.variant, self.psnr, self.ssim, self.l1_objective, self.own_loss)


def split_heldout(observations: Sequence[Observation]) -> Tuple[List[Observation], List[Observation]]:
    """The last third (at least one) is held out when nothing else is given"""
    if len(observations) < 2:
        raise EmptyDatasetError("ablations need at least two observations")
    heldout = max(1, len(observations) // 3)
    return list(observations[:-heldout]), list(observations[-heldout:])


def score(cfg: PipelineConfig, observations: Sequence[Observation]) -> Tuple[float, float]:
    """Mean PSNR and SSIM of the clipped pipeline outputs"""
    psnrs, ssims = [], []
    for obs in observations:
        plan = DeconvPlan.build(obs.kernel, *obs.blurred.shape)
        restored = np.clip(run_forward(obs.blurred, plan, cfg).output, 0.0, 1.0)
        psnrs.append(psnr(restored, obs.clean))
        ssims.append(ssim(restored, obs.clean))
    return float(np.mean(psnrs)), float(np.mean(ssims))


def _stage_one_losses(result: PipelineTrainResult, train: Sequence[Observation],
                      recipe: TrainingRecipe) -> Tuple[float, float]:
    """Stage-1 denoiser on the common L1 objective and its own converged loss"""
    if not result.denoisers:
        return float("nan"), float("nan")
    first = result.denoisers[0]
    prefix = PipelineConfig(gamma0=recipe.gamma0, domain=recipe.domain, z_init=recipe.z_init, monotone=False)
    samples = stage_samples(train, prefix, recipe.threads)
    common = evaluate_loss(first.weights, samples, Loss.L1)
    own = float(np.mean(first.losses[-TAIL:])) if first.losses else float("nan")
    return common, own


def _trained_row(variant: str, recipe: TrainingRecipe, train: Sequence[Observation],
                 heldout: Sequence[Observation], train_gammas: bool = True) -> AblationRow:
    logger.info(f"Ablation variant {variant}")
    result = train_pipeline(train, recipe, train_gammas=train_gammas)
    mean_psnr, mean_ssim = score(result.config, heldout)
    common, own = _stage_one_losses(result, train, recipe)
    row = AblationRow(variant, mean_psnr, mean_ssim, common, own)
    logger.info(f"{variant}: PSNR {mean_psnr:.2f} dB, SSIM {mean_ssim:.4f}, L1 objective {common:.6f}")
    return row


def domain_ablation(recipe: TrainingRecipe, train, heldout) -> List[AblationRow]:
    return [
        _trained_row("gradient", recipe.with_overrides(domain=Domain.GRADIENT), train, heldout),
        _trained_row("intensity", recipe.with_overrides(domain=Domain.INTENSITY), train, heldout),
    ]


def loss_ablation(recipe: TrainingRecipe, train, heldout) -> List[AblationRow]:
    """Single-stage pipelines with gammas fixed, so only the denoiser loss differs"""
    rows = []
    for loss in (Loss.L1, Loss.L2):
        denoiser = replace(recipe.denoiser, loss=loss)
        single = recipe.with_overrides(iterations=1, gammas=recipe.gammas[:1], denoiser=denoiser, rounds=1)
        rows.append(_trained_row(loss.value, single, train, heldout, train_gammas=False))
    return rows


def iterations_ablation(recipe: TrainingRecipe, train, heldout) -> List[AblationRow]:
    baseline = PipelineConfig(gamma0=recipe.gamma0, z_init=recipe.z_init, monotone=False)
    mean_psnr, mean_ssim = score(baseline, heldout)
    rows = [AblationRow("initial", mean_psnr, mean_ssim)]
    rows.append(_trained_row(
        "1-stage", recipe.with_overrides(iterations=1, gammas=recipe.gammas[:1]), train, heldout
    ))
    if recipe.iterations > 1:
        rows.append(_trained_row(f"{recipe.iterations}-stage", recipe, train, heldout))
    return rows


def run_ablation(experiment: Experiment, recipe: TrainingRecipe,
                 train: Sequence[Observation], heldout: Sequence[Observation]) -> List[AblationRow]:
    if not train or not heldout:
        raise EmptyDatasetError("ablations need training and held-out observations")
    runners = {
        Experiment.DOMAIN: domain_ablation,
        Experiment.LOSS: loss_ablation,
        Experiment.ITERATIONS: iterations_ablation,
    }
    return runners[experiment](recipe, list(train), list(heldout))


def write_ablation_report(path: Union[str, Path], rows: Sequence[AblationRow]) -> None:
    write_report(path, REPORT_COLUMNS, [row.as_row() for row in rows])
