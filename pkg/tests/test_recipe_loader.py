"""
Tests for training recipe loading
"""

import json

import pytest

from iterdeconv.config import CONFIG_DIR, ToolkitConfig
from iterdeconv.deconv import ZInit
from iterdeconv.errors import ConfigError
from iterdeconv.fcnn import Domain, Loss
from iterdeconv.recipe_loader import RecipeLoader, TrainingRecipe, load_recipe, recipe_from_dict


@pytest.fixture(autouse=True)
def no_recipe_variable(monkeypatch):
    monkeypatch.delenv("TRAINING_RECIPE", raising=False)


def test_desk_recipe_values():
    recipe = load_recipe(str(CONFIG_DIR / "desk_recipe.yaml"))
    assert recipe.iterations == 3
    assert recipe.gammas == [100.0, 50.0, 25.0]
    assert recipe.domain is Domain.GRADIENT
    assert recipe.z_init is ZInit.ZERO
    assert recipe.hidden_channels == 16
    assert recipe.denoiser.learning_rate == 0.0001
    assert recipe.denoiser.loss is Loss.L1
    assert recipe.hyper.lr_other == 1000.0
    assert recipe.hyper.restarts == 2
    assert recipe.corpus.kernel_seeds == [11, 12, 13, 14]


def test_json_recipe(tmp_path):
    path = tmp_path / "recipe.json"
    path.write_text(json.dumps({
        "seed": 3,
        "pipeline": {"iterations": 2, "gamma0": 80, "gammas": [40, 20], "domain": "intensity",
                     "z_init": "gradient"},
        "denoiser": {"loss": "l2", "hidden_channels": 8},
    }))
    recipe = RecipeLoader(str(tmp_path)).load(str(path))
    assert recipe.domain is Domain.INTENSITY
    assert recipe.z_init is ZInit.GRADIENT
    assert recipe.denoiser.loss is Loss.L2
    assert recipe.denoiser.seed == 3
    assert recipe.hyper.seed == 3
    assert recipe.gammas == [40.0, 20.0]


def test_missing_gammas_are_derived_by_halving():
    recipe = recipe_from_dict({"pipeline": {"iterations": 3, "gamma0": 400}})
    assert recipe.gammas == [200.0, 100.0, 50.0]


def test_missing_keys_fall_back_to_configuration(test_config):
    recipe = recipe_from_dict({}, test_config)
    assert recipe.iterations == 1
    assert recipe.hidden_channels == 4
    assert recipe.denoiser.batch_size == 2
    assert recipe.corpus.patch_size == 32


@pytest.mark.parametrize("data", [
    {"pipeline": {"iterations": 2, "gammas": [10.0]}},
    {"pipeline": {"domain": "frequency"}},
    {"denoiser": {"loss": "huber"}},
    {"rounds": 0},
    {"hyper": [1, 2]},
])
def test_invalid_recipes(data):
    with pytest.raises(ConfigError):
        recipe_from_dict(data)


def test_unsupported_suffix_and_missing_file(tmp_path):
    path = tmp_path / "recipe.toml"
    path.write_text("seed = 1\n")
    loader = RecipeLoader(str(tmp_path))
    with pytest.raises(ConfigError):
        loader.load(str(path))
    with pytest.raises(ConfigError):
        loader.load(str(tmp_path / "absent.yaml"))


def test_no_recipe_anywhere_uses_defaults(tmp_path):
    recipe = RecipeLoader(str(tmp_path)).load()
    assert recipe.gammas == [100.0, 50.0, 25.0]
    assert recipe.hidden_channels == ToolkitConfig().denoiser.hidden_channels


def test_recipe_variable_is_honoured(tmp_path, monkeypatch):
    path = tmp_path / "elsewhere.yaml"
    path.write_text("pipeline:\n  iterations: 1\n  gamma0: 50\n")
    monkeypatch.setenv("TRAINING_RECIPE", str(path))
    loader = RecipeLoader(str(tmp_path / "empty"))
    recipe = loader.load()
    assert loader.recipe_file == path
    assert recipe.gammas == [25.0]


def test_with_run_settings_reaches_nested_trainers():
    recipe = TrainingRecipe().with_run_settings(seed=9, threads=4)
    assert (recipe.seed, recipe.threads) == (9, 4)
    assert (recipe.denoiser.seed, recipe.denoiser.threads) == (9, 4)
    assert (recipe.hyper.seed, recipe.hyper.threads) == (9, 4)
    assert TrainingRecipe().with_overrides(rounds=2).rounds == 2
