"""Tests for configuration loading and validation."""
from pathlib import Path

import pytest

from conftest import tiny_config, tiny_config_data

from lifelong_diffusion.config import (
    load_config,
    parse_config,
    render_config,
    save_config,
)
from lifelong_diffusion.errors import ConfigError

_DESK_CONFIG = Path(__file__).parent.parent / "configs" / "desk.yaml"


def field_of(data) -> str:
    with pytest.raises(ConfigError) as info:
        parse_config(data)
    return info.value.field


def test_packaged_defaults() -> None:
    config = load_config()
    assert config.train.steps == 500
    assert config.train.learning_rate == pytest.approx(1.5e-3)
    assert config.train.batch_size == 2
    assert config.prior.num_images == 200
    assert config.prior.subsample == 50
    assert config.sampling.steps == 200
    assert config.sampling.guidance_scale == 7.0
    ids = [concept.concept_id for concept in config.concepts]
    assert ids == ["dog", "duck-toy", "cat", "backpack", "teddybear"]
    assert config.method == "l2dm"


def test_desk_config_is_merged_over_defaults() -> None:
    config = load_config(_DESK_CONFIG)
    assert config.output_dir == "runs/desk"
    assert config.schedule.steps == 200
    assert config.schedule.beta_end == pytest.approx(0.02)
    assert len(config.concepts) == 3
    assert config.guidance.use_caa


def test_overrides_win() -> None:
    overrides = {"seed": 3, "train.use_tame": False, "output_dir": "elsewhere"}
    config = load_config(_DESK_CONFIG, overrides)
    assert config.seed == 3
    assert config.output_dir == "elsewhere"
    assert config.method == "no-tame"


@pytest.mark.parametrize(
    ("use_tame", "use_ecd", "method"),
    [
        (True, True, "l2dm"),
        (False, False, "finetune"),
        (False, True, "no-tame"),
        (True, False, "no-ecd"),
    ],
)
def test_method_labels(use_tame: bool, use_ecd: bool, method: str) -> None:
    config = tiny_config(train={"use_tame": use_tame, "use_ecd": use_ecd})
    assert config.method == method


def test_render_round_trip(tmp_path) -> None:
    config = tiny_config(str(tmp_path / "run"))
    save_config(config, tmp_path / "run" / "config.yaml")
    assert load_config(tmp_path / "run" / "config.yaml") == config
    restored = load_config(tmp_path / "run" / "config.yaml")
    assert render_config(restored) == render_config(config)


def test_unknown_key_is_named() -> None:
    assert field_of(tiny_config_data(train={"stepz": 3})) == "train.stepz"
    assert field_of({**tiny_config_data(), "extra": 1}) == "extra"


@pytest.mark.parametrize(
    ("sections", "field"),
    [
        ({"model": {"resolution": 7}}, "model.resolution"),
        ({"train": {"learning_rate": -1.0}}, "train.learning_rate"),
        ({"train": {"steps": "many"}}, "train.steps"),
        ({"train": {"use_ecd": "yes"}}, "train.use_ecd"),
        ({"guidance": {"kernel_size": 4}}, "guidance.kernel_size"),
        ({"guidance": {"threshold_ratio": 0.0}}, "guidance.threshold_ratio"),
        ({"sampling": {"steps": 50}}, "sampling.steps"),
        ({"evaluation": {"prompts_per_concept": 21}}, "evaluation.prompts_per_concept"),
    ],
)
def test_invalid_values_are_named(sections, field: str) -> None:
    assert field_of(tiny_config_data(**sections)) == field


def test_invalid_concept_is_named() -> None:
    data = tiny_config_data()
    data["concepts"][0]["hue"] = 1.5
    assert field_of(data) == "concepts[0].hue"


def test_duplicate_tokens() -> None:
    data = tiny_config_data()
    data["concepts"][1]["token"] = "V1"
    assert field_of(data) == "concepts"


def test_too_many_concepts_for_the_slots() -> None:
    data = tiny_config_data(concepts=3, model={"personalized_slots": 2})
    assert field_of(data) == "concepts"


def test_missing_config_file(tmp_path) -> None:
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


def test_malformed_yaml(tmp_path) -> None:
    path = tmp_path / "broken.yaml"
    path.write_text("train: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_errors_exit_with_code_two() -> None:
    assert ConfigError("seed", "bad").exit_code == 2
