import pytest

from colonnet.config import KEYS, ConfigError, RunConfig, describe_keys


def test_defaults_cover_every_key():
    cfg = RunConfig()
    assert set(cfg.values) == set(KEYS)
    assert cfg["backbone.name"] == "densenet121"
    assert cfg["train.segmentation_epochs"] == 40
    assert cfg["loss.ft_gamma"] == pytest.approx(4 / 3)


def test_parse_text_with_comments():
    cfg = RunConfig.from_text("""
        # comment
        backbone.name = tiny   # trailing
        heads.cls_widths = 64, 32
        aug.contrast_ablation = yes
        train.learning_rate = 3e-4
    """, env={})
    assert cfg["backbone.name"] == "tiny"
    assert cfg["heads.cls_widths"] == [64, 32]
    assert cfg["aug.contrast_ablation"] is True
    assert cfg["train.learning_rate"] == 3e-4


def test_unknown_key_named():
    with pytest.raises(ConfigError) as err:
        RunConfig.from_text("bakbone.name = tiny", env={})
    assert err.value.key == "bakbone.name"


def test_bad_value_and_syntax():
    with pytest.raises(ConfigError, match="unet.depth"):
        RunConfig.from_text("unet.depth = deep", env={})
    with pytest.raises(ConfigError, match="line 1"):
        RunConfig.from_text("just words", env={})


def test_seed_env_override():
    cfg = RunConfig.from_text("seed = 3", env={"COLONNET_SEED": "17"})
    assert cfg["seed"] == 17
    assert cfg.build_schedule().seed == 17


def test_text_round_trip():
    cfg = RunConfig.from_mapping({"backbone.name": "tiny", "unet.depth": 3}, env={})
    again = RunConfig.from_text(cfg.to_text(), env={})
    assert again.values == cfg.values


def test_describe_lists_all_keys():
    text = describe_keys()
    assert all(k in text for k in KEYS)


def test_invalid_combination_is_config_error():
    cfg = RunConfig.from_mapping({"input_size": 100}, env={})
    with pytest.raises(ConfigError):
        cfg.build_model()
