"""
Tests for stage-wise pipeline training and the synthetic corpus
"""

import numpy as np
import pytest

from iterdeconv.deconv import DeconvPlan, grad_extract, initial_deconv
from iterdeconv.errors import ConfigError, EmptyDatasetError
from iterdeconv.fcnn import Domain, TrainConfig
from iterdeconv.hyper import HyperTrainConfig
from iterdeconv.pipeline import PipelineConfig
from iterdeconv.recipe_loader import CorpusRecipe, TrainingRecipe
from iterdeconv.training import build_corpus, stage_samples, train_pipeline


def tiny_recipe(**changes) -> TrainingRecipe:
    recipe = TrainingRecipe(
        iterations=1, gamma0=200.0, gammas=[100.0], hidden_channels=4,
        denoiser=TrainConfig(learning_rate=1e-4, momentum=0.9, batch_size=2, iterations=2, log_every=0),
        hyper=HyperTrainConfig(lr_last=1.0, lr_other=100.0, momentum=0.5, iterations=1, restarts=1,
                               log_every=0),
    )
    return recipe.with_overrides(**changes)


def test_stage_samples_for_the_first_stage(observations):
    prefix = PipelineConfig(gamma0=150.0)
    samples = stage_samples(observations, prefix)
    obs = observations[0]
    x0 = initial_deconv(obs.blurred, DeconvPlan.build(obs.kernel, 32, 32), 150.0)
    np.testing.assert_array_equal(samples[0].inputs[0], grad_extract(x0)[0])
    np.testing.assert_array_equal(samples[0].targets[1], grad_extract(obs.clean)[1])


def test_intensity_samples_hold_images(observations):
    samples = stage_samples(observations, PipelineConfig(gamma0=150.0, domain=Domain.INTENSITY))
    assert len(samples[1].inputs) == 1
    np.testing.assert_array_equal(samples[1].targets[0], observations[1].clean)


def test_stage_samples_match_across_thread_counts(observations):
    prefix = PipelineConfig(gamma0=150.0)
    serial = stage_samples(observations, prefix)
    parallel = stage_samples(observations, prefix, threads=3)
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a.inputs[0], b.inputs[0])


def test_stage_samples_reject_empty_input():
    with pytest.raises(EmptyDatasetError):
        stage_samples([], PipelineConfig(gamma0=1.0))


def test_train_pipeline_produces_a_complete_config(observations):
    result = train_pipeline(observations, tiny_recipe())
    assert result.config.iterations == 1
    assert len(result.config.weights) == 1
    assert len(result.denoisers) == 1
    assert len(result.hyper) == 1
    assert result.config.all_gammas == result.hyper[0].gammas
    phases = {phase for phase, _, _ in result.losses}
    assert "denoiser-1" in phases


def test_fixed_gammas_are_left_alone(observations):
    result = train_pipeline(observations, tiny_recipe(), train_gammas=False)
    assert result.config.all_gammas == [200.0, 100.0]
    assert not result.hyper


def test_every_round_retrains_every_stage(observations):
    calls = []
    recipe = tiny_recipe(rounds=2)
    result = train_pipeline(observations, recipe, train_gammas=False,
                            on_iteration=lambda stage, i, v: calls.append((stage, i)))
    assert [r.stage for r in result.denoisers] == [1, 1]
    assert calls == [(1, 0), (1, 1), (1, 0), (1, 1)]


def test_train_pipeline_validates_inputs(observations):
    with pytest.raises(EmptyDatasetError):
        train_pipeline([], tiny_recipe())
    with pytest.raises(ConfigError):
        train_pipeline(observations, tiny_recipe(), initial=PipelineConfig(gamma0=10.0))


def test_train_pipeline_is_deterministic(observations):
    first = train_pipeline(observations, tiny_recipe())
    second = train_pipeline(observations, tiny_recipe())
    assert first.config.all_gammas == second.config.all_gammas
    for a, b in zip(first.config.weights[0].parameters(), second.config.weights[0].parameters()):
        np.testing.assert_array_equal(a, b)


def test_build_corpus_split_and_determinism():
    corpus = CorpusRecipe(train_images=3, heldout_images=2, image_size=40, patch_size=32,
                          kernel_seeds=[1, 2], kernel_sizes=[11])
    train, heldout = build_corpus(corpus, seed=6)
    assert (len(train), len(heldout)) == (3, 2)
    assert train[0].clean.shape == (32, 32)
    assert train[1].kernel.shape == (11, 11)
    again, _ = build_corpus(corpus, seed=6)
    np.testing.assert_array_equal(train[2].blurred, again[2].blurred)
    assert not any(np.array_equal(h.clean, t.clean) for h in heldout for t in train)


def test_build_corpus_needs_kernels():
    with pytest.raises(ConfigError):
        build_corpus(CorpusRecipe(kernel_seeds=[]), seed=0)
