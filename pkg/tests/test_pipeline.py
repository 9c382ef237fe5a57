"""
Tests for the iterative deconvolution pipeline
"""

import numpy as np
import pytest

from iterdeconv.deconv import DeconvPlan, ZInit, initial_deconv
from iterdeconv.errors import ConfigError
from iterdeconv.fcnn import Domain, identity_weights, init_denoiser, standard_architecture
from iterdeconv.hyper import tune_gamma0
from iterdeconv.image_io import load_gradients, read_image
from iterdeconv.kernel import BlurKernel
from iterdeconv.metrics import psnr
from iterdeconv.pipeline import (
    Pipeline,
    PipelineConfig,
    dump_intermediates,
    is_non_increasing,
    run_forward,
    run_intensity_variant,
    run_pipeline,
)


def identity_pipeline(domain: Domain, stages: int = 3) -> PipelineConfig:
    gammas = [100.0 / 2 ** t for t in range(stages)]
    return PipelineConfig(
        gamma0=200.0, gammas=gammas, weights=[identity_weights(4)] * stages,
        domain=domain, z_init=ZInit.GRADIENT,
    )


def test_identity_kernel_and_identity_denoiser_is_a_fixed_point(rng):
    y = rng.random((8, 8))
    result = run_pipeline(y, BlurKernel.identity(), identity_pipeline(Domain.GRADIENT))
    np.testing.assert_allclose(result.image, y, atol=1e-9)


def test_intensity_variant_fixed_point(rng):
    y = rng.random((8, 10))
    result = run_intensity_variant(y, BlurKernel.identity(), identity_pipeline(Domain.INTENSITY))
    np.testing.assert_allclose(result.image, y, atol=1e-9)


def test_intensity_variant_requires_intensity_config(rng):
    with pytest.raises(ConfigError):
        run_intensity_variant(rng.random((8, 8)), BlurKernel.identity(), identity_pipeline(Domain.GRADIENT))


def test_zero_stage_pipeline_is_the_initial_deconvolution(observations):
    obs = observations[0]
    plan = DeconvPlan.build(obs.kernel, *obs.blurred.shape)
    result = run_pipeline(obs.blurred, obs.kernel, PipelineConfig(gamma0=80.0), plan)
    np.testing.assert_array_equal(result.image, initial_deconv(obs.blurred, plan, 80.0))


def test_pipeline_is_deterministic(observations):
    weights = [init_denoiser(standard_architecture(4), seed) for seed in (1, 2)]
    cfg = PipelineConfig(gamma0=200.0, gammas=[100.0, 50.0], weights=weights)
    obs = observations[1]
    first = run_pipeline(obs.blurred, obs.kernel, cfg).image
    second = run_pipeline(obs.blurred, obs.kernel, cfg).image
    np.testing.assert_array_equal(first, second)


def test_forward_trace_records_every_stage(observations):
    obs = observations[0]
    cfg = PipelineConfig(gamma0=200.0, gammas=[100.0, 50.0],
                         weights=[init_denoiser(standard_architecture(4), 3)] * 2)
    plan = DeconvPlan.build(obs.kernel, *obs.blurred.shape)
    trace = run_forward(obs.blurred, plan, cfg, keep_caches=True)
    assert len(trace.stages) == 2
    assert len(trace.images) == 3
    assert all(len(stage.denoiser_caches) == 2 for stage in trace.stages)
    assert not run_forward(obs.blurred, plan, cfg).stages[0].denoiser_caches


def test_config_validation():
    weights = [identity_weights(4)] * 2
    with pytest.raises(ConfigError):
        PipelineConfig(gamma0=10.0, gammas=[20.0, 5.0], weights=weights)
    with pytest.raises(ConfigError):
        PipelineConfig(gamma0=10.0, gammas=[5.0], weights=weights)
    with pytest.raises(ConfigError):
        PipelineConfig(gamma0=10.0, gammas=[5.0, 0.0], weights=weights)
    relaxed = PipelineConfig(gamma0=10.0, gammas=[20.0, 5.0], weights=weights, monotone=False)
    assert relaxed.all_gammas == [10.0, 20.0, 5.0]


def test_config_helpers():
    cfg = identity_pipeline(Domain.GRADIENT)
    assert cfg.iterations == 3
    assert cfg.truncated(1).all_gammas == [200.0, 100.0]
    assert cfg.with_gammas([9.0, 8.0, 7.0, 6.0]).gammas == [8.0, 7.0, 6.0]
    assert is_non_increasing([3.0, 3.0, 1.0])
    assert not is_non_increasing([1.0, 2.0])


def test_archive_round_trip_through_config():
    cfg = identity_pipeline(Domain.INTENSITY)
    restored = PipelineConfig.from_archive(cfg.to_archive())
    assert restored.all_gammas == cfg.all_gammas
    assert restored.domain is Domain.INTENSITY
    assert restored.z_init is ZInit.GRADIENT


def test_dump_intermediates_writes_initial_plus_every_stage(tmp_path, observations):
    cfg = identity_pipeline(Domain.GRADIENT)
    cfg.dump_intermediates = True
    obs = observations[0]
    result = run_pipeline(obs.blurred, obs.kernel, cfg)
    written = dump_intermediates(result, tmp_path / "stages")
    assert [p.name for p in written] == ["stage_0.pgm", "stage_1.pgm", "stage_2.pgm", "stage_3.pgm"]
    assert read_image(written[-1]).shape == obs.blurred.shape
    grad_h, grad_w = load_gradients(tmp_path / "stages" / "gradients" / "stage_2.idgf")
    np.testing.assert_array_equal(grad_h, result.denoised_gradients[1][0])
    np.testing.assert_array_equal(grad_w, result.denoised_gradients[1][1])


def test_intermediates_are_opt_in(observations):
    obs = observations[0]
    result = run_pipeline(obs.blurred, obs.kernel, identity_pipeline(Domain.GRADIENT))
    assert result.intermediates == []


def test_deblur_many_matches_serial_results(observations):
    pipeline = Pipeline(PipelineConfig(gamma0=200.0, gammas=[100.0], weights=[init_denoiser(standard_architecture(4), 8)]))
    items = [(o.blurred, o.kernel) for o in observations]
    serial = pipeline.deblur_many(items, threads=1)
    parallel = pipeline.deblur_many(items, threads=3)
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a.image, b.image)
    assert len(pipeline._plans) == 1


def test_tuned_initial_deconvolution_beats_the_blurry_input(observation_factory):
    obs = observation_factory(11, 64, BlurKernel.gaussian(9, 1.6), noise_sigma=0.01)
    gamma0, _ = tune_gamma0([obs], np.geomspace(1.0, 1e5, 21).tolist())
    plan = DeconvPlan.build(obs.kernel, 64, 64)
    restored = initial_deconv(obs.blurred, plan, gamma0)
    assert psnr(restored, obs.clean) > psnr(obs.blurred, obs.clean)
