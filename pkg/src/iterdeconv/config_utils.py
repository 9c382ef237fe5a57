"""
Configuration utilities for the deconvolution toolkit
"""

import sys
import logging
from typing import Optional, Dict, Any
from .config import ToolkitConfig, Profile

logger = logging.getLogger(__name__)


def get_config(profile: Optional[str] = None) -> ToolkitConfig:
    """
    Get configuration for the specified profile or auto-detect from environment variables.

    Args:
        profile: Profile name (desk, full, test)
                 If None, will use DECONV_PROFILE env var or default to desk

    Returns:
        ToolkitConfig: Resolved toolkit configuration
    """
    if profile:
        try:
            profile_enum = Profile(profile.lower())
        except ValueError:
            logging.warning(f"Unknown profile '{profile}', using environment variables")
            return ToolkitConfig.from_env()
        return ToolkitConfig.for_profile(profile_enum)
    return ToolkitConfig.from_env()


def validate_config(config: ToolkitConfig) -> bool:
    """
    Validate configuration and log any errors.

    Args:
        config: ToolkitConfig to validate

    Returns:
        bool: True if valid, False if errors found
    """
    errors = config.validate()
    for error in errors:
        logger.error(f"Configuration error ({config.profile.value} profile): {error}")
    return not errors


def setup_logging(config: ToolkitConfig, level: Optional[str] = None) -> None:
    """
    Set up logging on standard error.

    Args:
        config: ToolkitConfig containing logging configuration
        level: Explicit level from the command line, overriding the configuration
    """
    log_level = getattr(logging, (level or config.log_level).upper(), logging.INFO)

    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S',
        stream=sys.stderr,
        force=True,
    )

    if config.debug:
        logging.getLogger('iterdeconv').setLevel(logging.DEBUG)


def describe_config(config: ToolkitConfig) -> Dict[str, Any]:
    """
    Short summary of the resolved configuration for log lines.

    Args:
        config: ToolkitConfig to summarize

    Returns:
        Dict containing the settings that most affect a run
    """
    return {
        "profile": config.profile.value,
        "debug": config.debug,
        "log_level": config.log_level,
        "threads": config.threads,
        "allow_narrow_denoiser": config.allow_narrow_denoiser,
        "hidden_channels": config.denoiser.hidden_channels,
        "pipeline_iterations": config.pipeline.iterations,
        "recipe_path": config.recipe_path,
    }
