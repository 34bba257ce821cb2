"""Config round-trip, presets, overrides, strict key checking."""

import pytest

from crossscene.config import (ConfigError, apply_overrides, config_from_dict,
                               config_to_dict, resolve_config, save_config)


def test_defaults_round_trip(tmp_path):
    cfg = resolve_config()
    save_config(cfg, tmp_path / "c.json")
    again = resolve_config(config_path=tmp_path / "c.json")
    assert config_to_dict(cfg) == config_to_dict(again)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        config_from_dict({"train": {"epcohs": 10}})
    with pytest.raises(ConfigError, match="unknown"):
        config_from_dict({"bundles": "x"})


def test_overrides_dotted_paths():
    data = apply_overrides({}, ["train.epochs=3", "train.ablation.use_lmmd=false",
                                "seeds=[1,2]", "source_bundle=here"])
    assert data["train"]["epochs"] == 3
    assert data["train"]["ablation"]["use_lmmd"] is False
    assert data["seeds"] == [1, 2]
    assert data["source_bundle"] == "here"


def test_override_requires_equals():
    with pytest.raises(ConfigError, match="key=value"):
        apply_overrides({}, ["train.epochs"])


def test_presets_carry_dataset_defaults():
    houston = resolve_config(preset="houston")
    assert houston.train.patch_size == 15
    assert houston.train.loss_weights.lambda_lmmd == pytest.approx(0.2)
    assert houston.train.loss_weights.lambda_st == pytest.approx(0.2)
    hyrank = resolve_config(preset="hyrank")
    assert hyrank.train.patch_size == 7
    assert (hyrank.train.loss_weights.lambda_lmmd,
            hyrank.train.loss_weights.lambda_st) == (0.6, 0.4)
    pavia = resolve_config(preset="pavia")
    assert pavia.train.patch_size == 9
    assert (pavia.train.loss_weights.lambda_lmmd,
            pavia.train.loss_weights.lambda_st) == (1.0, 0.8)
    assert len(pavia.seeds) == 5


def test_shared_optimizer_defaults():
    cfg = resolve_config()
    t = cfg.train
    assert (t.epochs, t.batch, t.lr0, t.alpha, t.beta) == (200, 100, 0.01, 10.0, 0.75)
    assert (t.momentum, t.weight_decay) == (0.9, 1e-4)
    assert t.loss_weights.tau == 0.95
    assert (t.loss_weights.lambda_lmmd, t.loss_weights.lambda_st) == (1.0, 1.0)


def test_seed_flag_overrides_seed_list():
    cfg = resolve_config(preset="pavia", seed=77)
    assert cfg.seeds == [77]


def test_validation_catches_bad_values():
    with pytest.raises(ConfigError):
        resolve_config(overrides=["train.loss_weights.tau=1.5"])
    with pytest.raises(ConfigError):
        resolve_config(overrides=["seeds=[]"])
    with pytest.raises(ConfigError):
        resolve_config(overrides=["train.attention.variant=z"])


def test_missing_config_file():
    with pytest.raises(ConfigError, match="not found"):
        resolve_config(config_path="/nonexistent/path.json")


def test_unparseable_config_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="unparseable"):
        resolve_config(config_path=p)


def test_unknown_preset():
    with pytest.raises(ConfigError, match="preset"):
        resolve_config(preset="mars")
