"""
Shared fixtures for the iterdeconv test suite
"""

import logging
import os

import numpy as np
import pytest

from iterdeconv.blur_model import Observation, SynthesisConfig, blur_synthesize, make_rng, quantize, synthetic_scene
from iterdeconv.config import Profile, ToolkitConfig
from iterdeconv.kernel import BlurKernel


@pytest.fixture(autouse=True)
def restore_environment():
    """Profile loading writes env files into os.environ; undo it after every test"""
    saved = dict(os.environ)
    yield
    os.environ.clear()
    os.environ.update(saved)


@pytest.fixture(autouse=True)
def restore_logging():
    """The CLI reconfigures the root logger; put pytest's handlers back"""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    package_level = logging.getLogger("iterdeconv").level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)
    logging.getLogger("iterdeconv").setLevel(package_level)


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def test_config() -> ToolkitConfig:
    return ToolkitConfig.for_profile(Profile.TEST)


def make_observation(seed: int, size: int = 32, kernel: BlurKernel = None,
                     noise_sigma: float = 0.01) -> Observation:
    """Quantized synthetic scene, Gaussian blur and seeded noise"""
    kernel = kernel or BlurKernel.gaussian(7, 1.2)
    clean = quantize(synthetic_scene(seed, size))
    blurred = blur_synthesize(clean, kernel, SynthesisConfig(noise_sigma, seed))
    return Observation(clean, kernel, blurred)


@pytest.fixture
def observations():
    return [make_observation(seed) for seed in (3, 4, 5)]


@pytest.fixture
def random_field(rng):
    def build(height: int, width: int = None) -> np.ndarray:
        return rng.random((height, width or height))
    return build


@pytest.fixture
def observation_factory():
    return make_observation
