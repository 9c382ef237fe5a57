"""
Configuration defaults for the deconvolution toolkit
Profile-based configuration read from environment variables and env files.
Command-line flags always take precedence over anything resolved here.
"""

import os
import logging
from pathlib import Path
from typing import Optional, List, Dict, Any
from dataclasses import dataclass, field
from dotenv import load_dotenv
from enum import Enum

from .errors import ConfigError

CONFIG_DIR = Path(__file__).parent / "profiles"

_TRUE = ("true", "1", "yes", "on")


class Profile(Enum):
    """Supported run profiles"""
    DESK = "desk"
    FULL = "full"
    TEST = "test"


@dataclass
class SynthesisDefaults:
    """Data synthesis defaults"""
    noise_sigma: float = 0.01
    patch_size: int = 64
    kernel_sizes: List[int] = field(default_factory=lambda: [11, 15, 21])


@dataclass
class DenoiserTrainDefaults:
    """Denoiser SGD defaults"""
    learning_rate: float = 0.01
    momentum: float = 0.95
    batch_size: int = 16
    iterations: int = 200
    hidden_channels: int = 64


@dataclass
class HyperTrainDefaults:
    """Hyper-parameter SGD defaults"""
    lr_last: float = 10.0
    lr_other: float = 10000.0
    momentum: float = 0.95
    restarts: int = 4
    iterations: int = 50


@dataclass
class PipelineDefaults:
    iterations: int = 3
    gamma0: float = 200.0
    z_init: str = "zero"


@dataclass
class ToolkitConfig:
    """Resolved toolkit configuration"""

    profile: Profile = Profile.DESK
    debug: bool = False
    log_level: str = "INFO"
    threads: int = 1
    allow_narrow_denoiser: bool = False
    recipe_path: Optional[str] = None

    synthesis: SynthesisDefaults = field(default_factory=SynthesisDefaults)
    denoiser: DenoiserTrainDefaults = field(default_factory=DenoiserTrainDefaults)
    hyper: HyperTrainDefaults = field(default_factory=HyperTrainDefaults)
    pipeline: PipelineDefaults = field(default_factory=PipelineDefaults)

    @classmethod
    def from_env(cls, env_file: Optional[str] = None) -> 'ToolkitConfig':
        """Create configuration from environment variables and optional env file"""
        profile_str = os.getenv("DECONV_PROFILE", "desk").lower()
        try:
            profile = Profile(profile_str)
        except ValueError:
            logging.warning(f"Unknown profile '{profile_str}', defaulting to desk")
            profile = Profile.DESK

        if env_file and Path(env_file).exists():
            logging.debug(f"Loading specified environment file: {env_file}")
            load_dotenv(env_file, override=True)
        else:
            env_file_path = CONFIG_DIR / f"env.{profile.value}"
            if env_file_path.exists():
                logging.debug(f"Loading profile file: {env_file_path}")
                load_dotenv(env_file_path, override=True)
            else:
                raise ConfigError(f"Profile file not found: {env_file_path}")

        load_dotenv()

        # the env file may name a different profile than the variable we started from
        profile_str = os.getenv("DECONV_PROFILE", profile.value).lower()
        try:
            profile = Profile(profile_str)
        except ValueError:
            pass

        kernel_sizes_str = os.getenv("SYNTH_KERNEL_SIZES", "11,15,21")
        kernel_sizes = [int(s.strip()) for s in kernel_sizes_str.split(",") if s.strip()]

        return cls(
            profile=profile,
            debug=os.getenv("DEBUG", "false").lower() in _TRUE,
            log_level=os.getenv("LOG_LEVEL", "INFO"),
            threads=int(os.getenv("DECONV_THREADS", "1")),
            allow_narrow_denoiser=os.getenv("ALLOW_NARROW_DENOISER", "false").lower() in _TRUE,
            recipe_path=os.getenv("TRAINING_RECIPE") or None,
            synthesis=SynthesisDefaults(
                noise_sigma=float(os.getenv("SYNTH_NOISE_SIGMA", "0.01")),
                patch_size=int(os.getenv("SYNTH_PATCH_SIZE", "64")),
                kernel_sizes=kernel_sizes,
            ),
            denoiser=DenoiserTrainDefaults(
                learning_rate=float(os.getenv("DENOISER_LR", "0.01")),
                momentum=float(os.getenv("DENOISER_MOMENTUM", "0.95")),
                batch_size=int(os.getenv("DENOISER_BATCH", "16")),
                iterations=int(os.getenv("DENOISER_ITERS", "200")),
                hidden_channels=int(os.getenv("DENOISER_HIDDEN_CHANNELS", "64")),
            ),
            hyper=HyperTrainDefaults(
                lr_last=float(os.getenv("HYPER_LR_LAST", "10")),
                lr_other=float(os.getenv("HYPER_LR_OTHER", "10000")),
                momentum=float(os.getenv("HYPER_MOMENTUM", "0.95")),
                restarts=int(os.getenv("HYPER_RESTARTS", "4")),
                iterations=int(os.getenv("HYPER_ITERS", "50")),
            ),
            pipeline=PipelineDefaults(
                iterations=int(os.getenv("PIPELINE_ITERATIONS", "3")),
                gamma0=float(os.getenv("PIPELINE_GAMMA0", "200")),
                z_init=os.getenv("PIPELINE_Z_INIT", "zero").lower(),
            ),
        )

    @classmethod
    def for_profile(cls, profile: Profile) -> 'ToolkitConfig':
        """Create configuration from the packaged file of a profile"""
        env_file = CONFIG_DIR / f"env.{profile.value}"
        if not env_file.exists():
            raise ConfigError(f"Profile file not found: {env_file}")
        return cls.from_env(str(env_file))

    def validate(self) -> List[str]:
        """Validate configuration and return list of errors"""
        errors = []

        valid_log_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if self.log_level.upper() not in valid_log_levels:
            errors.append(f"LOG_LEVEL must be one of: {', '.join(valid_log_levels)}")

        if self.threads < 1:
            errors.append("DECONV_THREADS must be at least 1")

        if self.synthesis.noise_sigma < 0:
            errors.append("SYNTH_NOISE_SIGMA must be non-negative")
        if self.synthesis.patch_size < 5:
            errors.append("SYNTH_PATCH_SIZE must be at least 5")
        for size in self.synthesis.kernel_sizes:
            if size % 2 == 0 or not 1 <= size <= 31:
                errors.append(f"SYNTH_KERNEL_SIZES entries must be odd and in [1, 31], got {size}")

        if self.denoiser.learning_rate <= 0:
            errors.append("DENOISER_LR must be positive")
        if not 0 <= self.denoiser.momentum < 1:
            errors.append("DENOISER_MOMENTUM must be in [0, 1)")
        if self.denoiser.batch_size < 1:
            errors.append("DENOISER_BATCH must be at least 1")
        if self.denoiser.hidden_channels < 2:
            errors.append("DENOISER_HIDDEN_CHANNELS must be at least 2")
        if self.denoiser.hidden_channels != 64 and not self.allow_narrow_denoiser:
            errors.append("DENOISER_HIDDEN_CHANNELS other than 64 requires ALLOW_NARROW_DENOISER")

        if self.hyper.lr_last <= 0 or self.hyper.lr_other <= 0:
            errors.append("HYPER_LR_LAST and HYPER_LR_OTHER must be positive")
        if self.hyper.restarts < 1:
            errors.append("HYPER_RESTARTS must be at least 1")

        if self.pipeline.iterations < 0:
            errors.append("PIPELINE_ITERATIONS must be non-negative")
        if self.pipeline.gamma0 <= 0:
            errors.append("PIPELINE_GAMMA0 must be positive")
        if self.pipeline.z_init not in ("zero", "gradient"):
            errors.append("PIPELINE_Z_INIT must be 'zero' or 'gradient'")

        if self.profile == Profile.FULL and self.allow_narrow_denoiser:
            errors.append("ALLOW_NARROW_DENOISER is not permitted in the full profile")

        return errors

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to dictionary"""
        return {
            "profile": self.profile.value,
            "debug": self.debug,
            "log_level": self.log_level,
            "threads": self.threads,
            "allow_narrow_denoiser": self.allow_narrow_denoiser,
            "recipe_path": self.recipe_path,
            "synthesis": {
                "noise_sigma": self.synthesis.noise_sigma,
                "patch_size": self.synthesis.patch_size,
                "kernel_sizes": self.synthesis.kernel_sizes,
            },
            "denoiser": {
                "learning_rate": self.denoiser.learning_rate,
                "momentum": self.denoiser.momentum,
                "batch_size": self.denoiser.batch_size,
                "iterations": self.denoiser.iterations,
                "hidden_channels": self.denoiser.hidden_channels,
            },
            "hyper": {
                "lr_last": self.hyper.lr_last,
                "lr_other": self.hyper.lr_other,
                "momentum": self.hyper.momentum,
                "restarts": self.hyper.restarts,
                "iterations": self.hyper.iterations,
            },
            "pipeline": {
                "iterations": self.pipeline.iterations,
                "gamma0": self.pipeline.gamma0,
                "z_init": self.pipeline.z_init,
            },
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ToolkitConfig':
        """Rebuild a configuration recorded with to_dict, ignoring the environment"""
        try:
            synthesis = dict(data.get("synthesis", {}))
            synthesis["kernel_sizes"] = list(synthesis.get("kernel_sizes", [11, 15, 21]))
            return cls(
                profile=Profile(data.get("profile", Profile.DESK.value)),
                debug=bool(data.get("debug", False)),
                log_level=str(data.get("log_level", "INFO")),
                threads=int(data.get("threads", 1)),
                allow_narrow_denoiser=bool(data.get("allow_narrow_denoiser", False)),
                recipe_path=data.get("recipe_path"),
                synthesis=SynthesisDefaults(**synthesis),
                denoiser=DenoiserTrainDefaults(**data.get("denoiser", {})),
                hyper=HyperTrainDefaults(**data.get("hyper", {})),
                pipeline=PipelineDefaults(**data.get("pipeline", {})),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Recorded configuration is invalid: {e}") from e
