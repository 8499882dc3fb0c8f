import json

import pytest

from pcregen.config import PRESETS, RunConfig, apply_ablation_overrides, load_config, preset
from pcregen.errors import ConfigError, ParseError


class TestPresets:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_presets_validate(self, name):
        assert preset(name).validate() == (True, None)

    def test_indoor_defaults(self):
        config = preset("indoor")
        assert config.schedule.k0 == 20
        assert config.schedule.r0 == 1.0
        assert config.schedule.params.sigma == 0.1
        assert config.thresholds.rotation_deg == 15.0
        assert config.thresholds.translation == 0.30

    def test_outdoor_values(self):
        config = preset("outdoor")
        assert config.schedule.r0 == 10.0
        assert config.schedule.params.sigma == 0.6
        assert config.thresholds.rotation_deg == 5.0
        assert config.thresholds.translation == 0.60

    def test_preset_is_a_copy(self):
        config = preset("desk")
        config.schedule.k0 = 999
        assert preset("desk").schedule.k0 == 40

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("lunar")


class TestRunConfig:
    """Tests for layered configuration documents"""

    def test_partial_document_layers_over_preset(self):
        config = RunConfig.from_dict({"preset": "desk", "schedule": {"k0": 12}, "rng_seed": 5})
        assert config.schedule.k0 == 12
        assert config.schedule.r0 == 0.5
        assert config.schedule.params.sigma == 0.03
        assert config.rng_seed == 5

    @pytest.mark.parametrize("document", [
        {"colour": "red"},
        {"schedule": {"k_zero": 3}},
        {"schedule": {"params": {"tau": 1.0}}},
        {"refinement": {"rounds": 3}},
        {"ablation": {"mode": "fast"}},
        {"preset": "lunar"},
        "not an object",
    ])
    def test_rejects_malformed_documents(self, document):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(document)

    @pytest.mark.parametrize("document", [
        {"schedule": {"k0": 0}},
        {"schedule": {"omega_r": 1.5}},
        {"schedule": {"params": {"a": 1.0}}},
        {"thresholds": {"translation": 0.0}},
        {"rng_seed": -3},
        {"ablation": {"matching": "ransac"}},
    ])
    def test_validate_catches_bad_values(self, document):
        is_valid, error = RunConfig.from_dict(document).validate()
        assert not is_valid
        assert error

    def test_json_round_trip(self):
        config = RunConfig.from_dict({"preset": "outdoor", "schedule": {"iterations": 3}, "refine": False})
        assert RunConfig.from_json(config.to_json()) == config

    def test_single_stage_schedule(self):
        config = RunConfig.from_dict({"ablation": {"progressive": False}, "schedule": {"iterations": 4}})
        assert config.effective_schedule().iterations == 1
        assert config.schedule.iterations == 4


class TestAblationOverrides:
    def test_switches(self):
        config = apply_ablation_overrides(preset("indoor"), ["matching=mm", "stages=local_only", "progressive=off"])
        assert config.ablation.matching == "mm"
        assert config.ablation.stages == "local_only"
        assert config.ablation.progressive is False
        assert not config.ablation.global_enabled

    def test_leaves_input_untouched(self):
        original = preset("indoor")
        apply_ablation_overrides(original, ["consistency=sc"])
        assert original.ablation.consistency == "ctc"

    @pytest.mark.parametrize("override", ["matching", "matching=ransac", "progressive=maybe", "colour=red"])
    def test_rejects(self, override):
        with pytest.raises(ConfigError):
            apply_ablation_overrides(preset("indoor"), [override])


class TestLoadConfig:
    def test_preset_only(self):
        assert load_config(preset_name="desk").preset == "desk"

    def test_document_preset_wins(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"preset": "outdoor"}))
        assert load_config(path, preset_name="desk").preset == "outdoor"

    def test_invalid_json_reports_line(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text('{\n  "rng_seed": 1,\n  "refine": tru\n}\n')
        with pytest.raises(ParseError) as excinfo:
            load_config(path)
        assert excinfo.value.line == 3

    def test_invalid_values(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"schedule": {"iterations": 0}}))
        with pytest.raises(ConfigError):
            load_config(path)
