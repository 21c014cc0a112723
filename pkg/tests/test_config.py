"""Configuration loading, validation, and CLI overrides."""

import json

import pytest

from hearbeam.config import (
    ConfigError,
    PipelineConfig,
    apply_param_overrides,
    config_from_dict,
    load_config,
)


def write_config(tmp_path, obj):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(obj))
    return path


class TestLoadConfig:
    def test_none_gives_defaults(self):
        config = load_config(None)
        assert config == PipelineConfig()

    def test_empty_object_gives_defaults(self, tmp_path):
        assert load_config(write_config(tmp_path, {})) == PipelineConfig()

    def test_full_file_round_trip(self, tmp_path):
        path = write_config(
            tmp_path,
            {
                "audio": {"sample_rate": 16000, "frame_len": 512, "hop_len": 256},
                "array": {"radius_m": 0.05, "speed_of_sound": 340.0},
                "tuning": {"agc_enabled": False, "aec_threshold": -50},
                "tracker": {"switch_margin_db": 6, "switch_hangover_s": 0.8},
                "localization": {"grid_resolution_deg": 2.0},
                "beam": {"retarget_threshold_deg": 1.0},
            },
        )
        config = load_config(path)
        assert config.geometry.mic_positions[0][0] == pytest.approx(0.05)
        assert config.geometry.speed_of_sound == 340.0
        assert config.tuning.agc_enabled is False
        assert config.tuning.aec_threshold == -50.0
        assert config.switch_margin_db == 6.0
        assert config.switch_hangover_s == 0.8
        assert config.grid.resolution == 2.0
        assert config.retarget_threshold_deg == 1.0

    def test_missing_file_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.json")

    def test_invalid_json_is_config_error(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(path)


class TestValidation:
    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="unknown section"):
            config_from_dict({"sound": {}})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="audio.bitrate"):
            config_from_dict({"audio": {"bitrate": 320}})

    def test_wrong_type_rejected(self):
        with pytest.raises(ConfigError, match="must be int"):
            config_from_dict({"audio": {"sample_rate": "fast"}})

    def test_bool_is_not_a_number(self):
        with pytest.raises(ConfigError, match="switch_margin_db"):
            config_from_dict({"tracker": {"switch_margin_db": True}})

    def test_int_accepted_for_float_key(self):
        config = config_from_dict({"tracker": {"switch_margin_db": 4}})
        assert config.switch_margin_db == 4.0

    def test_unknown_tuning_key_rejected(self):
        with pytest.raises(ConfigError, match="tuning.reverb_boost"):
            config_from_dict({"tuning": {"reverb_boost": True}})

    def test_tuning_bool_takes_only_bool(self):
        with pytest.raises(ConfigError, match="true or false"):
            config_from_dict({"tuning": {"agc_enabled": 1}})

    def test_out_of_range_threshold_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"tuning": {"aec_threshold": -200}})

    def test_invalid_audio_format_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"audio": {"frame_len": 500, "hop_len": 256}})


class TestOverrides:
    def test_toggle_override(self):
        config = apply_param_overrides(PipelineConfig(), ["agc_enabled=false"])
        assert config.tuning.agc_enabled is False

    def test_threshold_override(self):
        config = apply_param_overrides(PipelineConfig(), ["aec_threshold=-42.5"])
        assert config.tuning.aec_threshold == -42.5

    def test_overrides_stack_left_to_right(self):
        config = apply_param_overrides(
            PipelineConfig(), ["aec_enabled=true", "aec_enabled=false"]
        )
        assert config.tuning.aec_enabled is False

    def test_file_values_survive_unrelated_overrides(self):
        base = config_from_dict({"tuning": {"aec_threshold": -33}})
        config = apply_param_overrides(base, ["agc_enabled=false"])
        assert config.tuning.aec_threshold == -33.0

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="name=value"):
            apply_param_overrides(PipelineConfig(), ["agc_enabled"])

    def test_non_json_value_rejected(self):
        with pytest.raises(ConfigError, match="JSON literal"):
            apply_param_overrides(PipelineConfig(), ["agc_enabled=off"])

    def test_unknown_name_rejected(self):
        with pytest.raises(ConfigError, match="no parameter"):
            apply_param_overrides(PipelineConfig(), ["loudness=true"])

    def test_number_for_toggle_rejected(self):
        with pytest.raises(ConfigError, match="true or false"):
            apply_param_overrides(PipelineConfig(), ["agc_enabled=1"])

    def test_out_of_range_threshold_rejected(self):
        with pytest.raises(ConfigError):
            apply_param_overrides(PipelineConfig(), ["aec_threshold=-200"])
