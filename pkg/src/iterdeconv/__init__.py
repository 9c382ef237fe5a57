"""
iterdeconv

Non-blind image deconvolution by half-quadratic splitting with learned
gradient-domain denoisers, plus trainers for the denoisers and for the
per-stage deconvolution hyper-parameters.
"""

from .deconv import DeconvPlan, ZInit, deconv_step, initial_deconv
from .fcnn import DenoiserWeights, Domain, Loss
from .image_io import ARCHIVE_VERSION, WeightArchive, load_weights, save_weights
from .kernel import BlurKernel
from .pipeline import Pipeline, PipelineConfig, run_pipeline

__version__ = "1.0.0"
FORMAT_VERSION = ARCHIVE_VERSION

__all__ = [
    "BlurKernel",
    "DeconvPlan",
    "DenoiserWeights",
    "Domain",
    "FORMAT_VERSION",
    "Loss",
    "Pipeline",
    "PipelineConfig",
    "WeightArchive",
    "ZInit",
    "deconv_step",
    "initial_deconv",
    "load_weights",
    "run_pipeline",
    "save_weights",
]
