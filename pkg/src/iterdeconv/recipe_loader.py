#!/usr/bin/env python3
"""
Training Recipe Loader
Loads the end-to-end training schedule from YAML or JSON files.
"""

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from .config import CONFIG_DIR, ToolkitConfig
from .deconv import ZInit
from .errors import ConfigError
from .fcnn import Domain, Loss, TrainConfig
from .hyper import HyperTrainConfig

logger = logging.getLogger(__name__)


@dataclass
class CorpusRecipe:
    """Desk-scale corpus built from synthetic scenes"""
    train_images: int = 20
    heldout_images: int = 10
    image_size: int = 96
    patch_size: int = 64
    kernel_seeds: List[int] = field(default_factory=lambda: [1, 2])
    kernel_sizes: List[int] = field(default_factory=lambda: [11, 15])
    noise_sigma: float = 0.01


@dataclass
class TrainingRecipe:
    """Alternating schedule: denoisers stage by stage, then every gamma end-to-end"""
    iterations: int = 3
    gamma0: float = 200.0
    gammas: List[float] = field(default_factory=lambda: [100.0, 50.0, 25.0])
    domain: Domain = Domain.GRADIENT
    z_init: ZInit = ZInit.ZERO
    hidden_channels: int = 64
    rounds: int = 1
    seed: int = 0
    threads: int = 1
    denoiser: TrainConfig = field(default_factory=TrainConfig)
    hyper: HyperTrainConfig = field(default_factory=HyperTrainConfig)
    corpus: CorpusRecipe = field(default_factory=CorpusRecipe)

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError(f"iterations must be non-negative, got {self.iterations}")
        if len(self.gammas) != self.iterations:
            raise ConfigError(
                f"recipe lists {len(self.gammas)} stage gammas for {self.iterations} iterations"
            )
        if self.rounds < 1:
            raise ConfigError(f"rounds must be at least 1, got {self.rounds}")

    def with_overrides(self, **changes: Any) -> "TrainingRecipe":
        return replace(self, **changes)

    def with_run_settings(self, seed: Optional[int] = None, threads: Optional[int] = None) -> "TrainingRecipe":
        """Push a command-line seed and thread count into every nested trainer"""
        seed = self.seed if seed is None else seed
        threads = self.threads if threads is None else threads
        return replace(
            self,
            seed=seed,
            threads=threads,
            denoiser=replace(self.denoiser, seed=seed, threads=threads),
            hyper=replace(self.hyper, seed=seed, threads=threads),
        )


def _section(data: Dict[str, Any], name: str) -> Dict[str, Any]:
    section = data.get(name) or {}
    if not isinstance(section, dict):
        raise ConfigError(f"recipe section '{name}' must be a mapping")
    return section


def recipe_from_dict(data: Dict[str, Any], defaults: Optional[ToolkitConfig] = None) -> TrainingRecipe:
    """Build a recipe from parsed YAML/JSON; missing keys fall back to the configuration"""
    defaults = defaults or ToolkitConfig()
    pipeline = _section(data, "pipeline")
    denoiser = _section(data, "denoiser")
    hyper = _section(data, "hyper")
    corpus = _section(data, "corpus")
    seed = int(data.get("seed", 0))
    threads = int(data.get("threads", defaults.threads))

    iterations = int(pipeline.get("iterations", defaults.pipeline.iterations))
    gamma0 = float(pipeline.get("gamma0", defaults.pipeline.gamma0))
    gammas = pipeline.get("gammas")
    if gammas is None:
        gammas = [gamma0 / 2 ** (t + 1) for t in range(iterations)]

    try:
        domain = Domain(pipeline.get("domain", "gradient"))
        z_init = ZInit(pipeline.get("z_init", defaults.pipeline.z_init))
        loss = Loss(denoiser.get("loss", "l1"))
    except ValueError as e:
        raise ConfigError(f"invalid recipe value: {e}") from e

    return TrainingRecipe(
        iterations=iterations,
        gamma0=gamma0,
        gammas=[float(g) for g in gammas],
        domain=domain,
        z_init=z_init,
        hidden_channels=int(denoiser.get("hidden_channels", defaults.denoiser.hidden_channels)),
        rounds=int(data.get("rounds", 1)),
        seed=seed,
        threads=threads,
        denoiser=TrainConfig(
            learning_rate=float(denoiser.get("learning_rate", defaults.denoiser.learning_rate)),
            momentum=float(denoiser.get("momentum", defaults.denoiser.momentum)),
            batch_size=int(denoiser.get("batch_size", defaults.denoiser.batch_size)),
            iterations=int(denoiser.get("iterations", defaults.denoiser.iterations)),
            seed=seed,
            loss=loss,
            log_every=int(denoiser.get("log_every", 10)),
            threads=threads,
        ),
        hyper=HyperTrainConfig(
            lr_last=float(hyper.get("lr_last", defaults.hyper.lr_last)),
            lr_other=float(hyper.get("lr_other", defaults.hyper.lr_other)),
            momentum=float(hyper.get("momentum", defaults.hyper.momentum)),
            iterations=int(hyper.get("iterations", defaults.hyper.iterations)),
            seed=seed,
            monotone_projection=bool(hyper.get("monotone_projection", True)),
            restarts=int(hyper.get("restarts", defaults.hyper.restarts)),
            batch_size=hyper.get("batch_size"),
            threads=threads,
            log_every=int(hyper.get("log_every", 10)),
        ),
        corpus=CorpusRecipe(
            train_images=int(corpus.get("train_images", 20)),
            heldout_images=int(corpus.get("heldout_images", 10)),
            image_size=int(corpus.get("image_size", 96)),
            patch_size=int(corpus.get("patch_size", defaults.synthesis.patch_size)),
            kernel_seeds=[int(s) for s in corpus.get("kernel_seeds", [1, 2])],
            kernel_sizes=[int(s) for s in corpus.get("kernel_sizes", defaults.synthesis.kernel_sizes)],
            noise_sigma=float(corpus.get("noise_sigma", defaults.synthesis.noise_sigma)),
        ),
    )


class RecipeLoader:
    """Finds and parses training recipes"""

    def __init__(self, config_dir: str = str(CONFIG_DIR)):
        self.config_dir = Path(config_dir)
        self.recipe_file: Optional[Path] = None

    def locate(self, recipe_file: Optional[str] = None) -> Optional[Path]:
        if recipe_file:
            return Path(recipe_file)
        env_recipe = os.getenv("TRAINING_RECIPE")
        if env_recipe:
            return Path(env_recipe)
        for name in ("desk_recipe.yaml", "desk_recipe.yml", "desk_recipe.json"):
            candidate = self.config_dir / name
            if candidate.exists():
                return candidate
        return None

    def load(self, recipe_file: Optional[str] = None,
             defaults: Optional[ToolkitConfig] = None) -> TrainingRecipe:
        """Load a recipe; with no file anywhere the configuration defaults are used"""
        self.recipe_file = self.locate(recipe_file)
        if self.recipe_file is None:
            logger.warning("No training recipe found, using configuration defaults")
            return recipe_from_dict({}, defaults)
        if not self.recipe_file.exists():
            raise ConfigError(f"Training recipe not found: {self.recipe_file}")

        suffix = self.recipe_file.suffix.lower()
        with open(self.recipe_file, 'r', encoding='utf-8') as f:
            if suffix in ('.yaml', '.yml'):
                data = yaml.safe_load(f) or {}
            elif suffix == '.json':
                data = json.load(f)
            else:
                raise ConfigError(f"Unsupported recipe format: {suffix}")

        recipe = recipe_from_dict(data, defaults)
        logger.info(
            f"Loaded recipe from {self.recipe_file}: {recipe.iterations} stages, "
            f"{recipe.rounds} round(s), domain {recipe.domain.value}"
        )
        return recipe


def load_recipe(recipe_file: Optional[str] = None,
                defaults: Optional[ToolkitConfig] = None) -> TrainingRecipe:
    """Convenience function to load a training recipe"""
    return RecipeLoader().load(recipe_file, defaults)
