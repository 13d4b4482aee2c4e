import json
import math
import os
import sys

import pytest
import yaml

sys.path.append(os.path.join(os.path.dirname(__file__), "..", "src"))

import socialav.config as config
from socialav.error_handler import ConfigurationError


def test_validate_config_silent_reports_invalid_config(monkeypatch, tmp_path):
    """validate_config_silent should load the config file before validation."""

    invalid_config_path = tmp_path / "config.yaml"
    invalid_config_path.write_text(
        "ppo:\n"
        "  clip: 1.5\n"
    )

    original_path = config._CONFIG_PATH
    original_cfg = config._CFG
    original_loaded = config._LOADED

    monkeypatch.setattr(config, "_CONFIG_PATH", str(invalid_config_path), raising=False)

    config._CFG = {}
    config._LOADED = False

    is_valid = None
    warnings = []

    try:
        is_valid, warnings = config.validate_config_silent()
    finally:
        config._CONFIG_PATH = original_path
        config._CFG = original_cfg
        config._LOADED = original_loaded

    assert not is_valid
    assert warnings
    assert any("ppo.clip" in warning for warning in warnings)


def test_reload_config_picks_up_file_changes(monkeypatch, tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("env:\n  max_steps: 50\n")
    monkeypatch.setattr(config, "_CONFIG_PATH", str(path), raising=False)
    try:
        config.reload_config()
        assert config.get_all()["env"] == {"max_steps": 50}
        assert config.get_default_run_config().env.max_steps == 50

        path.write_text("env:\n  max_steps: 70\n")
        assert config.get_default_run_config().env.max_steps == 50
        config.reload_config()
        assert config.get_default_run_config().env.max_steps == 70
    finally:
        monkeypatch.undo()
        config.reload_config()


def test_shipped_config_matches_defaults():
    with open(config._CONFIG_PATH, "r") as f:
        shipped = config.build_run_config(yaml.safe_load(f))
    assert shipped.to_dict() == config.RunConfig().to_dict()


def test_all_errors_are_reported_together():
    with pytest.raises(ConfigurationError) as exc:
        config.build_run_config({"ppo": {"clip": 0.0, "gamma": 2.0}, "env": {"n_neighbours": 4}})
    message = str(exc.value)
    assert "ppo.clip" in message
    assert "ppo.gamma" in message
    assert "env.n_neighbours is not a known setting" in message


def test_type_errors_name_the_field():
    with pytest.raises(ConfigurationError) as exc:
        config.build_run_config({"dpl": {"window": "long"}, "policy": {"use_prior": "sometimes"}})
    assert "dpl.window must be an integer" in str(exc.value)
    assert "policy.use_prior must be a boolean" in str(exc.value)


def test_phi_outside_quarter_turn_is_rejected():
    with pytest.raises(ConfigurationError, match="social.phi"):
        config.build_run_config({"social": {"phi": math.pi / 2 + 0.01}})
    cfg = config.build_run_config({"social": {"phi": math.pi / 2}})
    assert cfg.social.phi == math.pi / 2


def test_sample_dt_must_divide_horizon():
    with pytest.raises(ConfigurationError, match="sample_dt must divide"):
        config.build_run_config({"drivers": {"horizon": 3.0, "sample_dt": 0.7}})


def test_partial_style_table_keeps_given_styles_only():
    cfg = config.build_run_config(
        {"drivers": {"styles": {"Moderate": {"d0": 5.0, "T": 1.5, "a0": 2.5, "b0": 4.0, "v0": 8.0}}}}
    )
    assert list(cfg.drivers.styles) == ["Moderate"]


def test_overrides_are_parsed_as_yaml():
    data = config.apply_overrides({}, ["experiment.phis=[0, 0.5]", "policy.use_prior=false", "ppo.clip=0.1"])
    cfg = config.build_run_config(data)
    assert cfg.experiment.phis == [0.0, 0.5]
    assert cfg.policy.use_prior is False
    assert cfg.ppo.clip == 0.1


def test_override_without_equals_is_a_configuration_error():
    with pytest.raises(ConfigurationError):
        config.parse_override("ppo.clip")


def test_apply_overrides_does_not_mutate_input():
    data = {"ppo": {"clip": 0.2}}
    config.apply_overrides(data, ["ppo.clip=0.3"])
    assert data == {"ppo": {"clip": 0.2}}


def test_snapshot_round_trips_through_load_run_config(tmp_path):
    cfg = config.build_run_config({"social": {"phi": 0.5}, "env": {"n_max": 4}})
    snapshot = dict(cfg.to_dict())
    snapshot["_run"] = {"command": "train-policy", "seed": 3}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(snapshot))

    again = config.load_run_config(str(path))
    assert again.to_dict() == cfg.to_dict()


def test_unreadable_config_file_raises(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("ppo: [1, 2\n")
    with pytest.raises(ConfigurationError, match="cannot parse"):
        config.read_config_file(str(path))


def test_default_config_path_points_at_shipped_file():
    from socialav.utils import get_config_path, get_project_root

    assert config._CONFIG_PATH == str(get_config_path())
    assert get_config_path().parent.parent == get_project_root()
    assert os.path.exists(config._CONFIG_PATH)
