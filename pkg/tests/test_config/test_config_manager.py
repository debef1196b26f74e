"""
Unit tests for the ConfigManager class.
"""

import json
import os
from unittest.mock import patch

import pytest

from src.config.config_manager import (
    CampaignConfig,
    ConfigManager,
    ConfigurationValidationError,
    MetricsOptions,
    SweepOptions,
)
from src.core.design import DesignConfig


@pytest.fixture
def manager():
    with patch.dict(os.environ, {}, clear=True):
        yield ConfigManager(env_file=None)


class TestCampaignConfig:
    """Test cases for CampaignConfig data model."""

    def test_defaults_are_valid(self):
        """Test validation with the default campaign."""
        assert CampaignConfig().validate() == []

    def test_validate_invalid_mode(self):
        """Test validation with an unknown context mode."""
        errors = CampaignConfig(mode="quantum").validate()
        assert any("Invalid mode 'quantum'" in e for e in errors)

    def test_validate_missing_output_dir(self):
        """Test validation without an output directory."""
        errors = CampaignConfig(output_dir="").validate()
        assert "output_dir is required but not provided" in errors

    def test_validate_missing_dataset(self, tmp_path):
        """Test validation with a dataset path that is not there."""
        missing = tmp_path / "nope.json"
        errors = CampaignConfig(dataset_path=str(missing)).validate()
        assert f"dataset_path does not exist: {missing}" in errors

    def test_validate_counts(self):
        """Test validation of shot and worker counts."""
        errors = CampaignConfig(shots=-1, workers=0).validate()
        assert any("shots must be >= 0" in e for e in errors)
        assert any("workers must be >= 1" in e for e in errors)

    def test_nested_errors_are_prefixed(self):
        """Test that nested option errors name their section."""
        config = CampaignConfig()
        config.noise.mix_weight = 2.0
        config.reconstruction.max_iterations = 0
        config.metrics.correct_scope = "some"
        config.design.ga.population_size = 1
        errors = config.validate()
        assert any(e.startswith("noise: ") for e in errors)
        assert any(e.startswith("reconstruction: ") for e in errors)
        assert any(e.startswith("metrics: ") for e in errors)
        assert any(e.startswith("ga: ") for e in errors)

    def test_unknown_sequence_set(self):
        """Test validation with a published set that does not exist."""
        config = CampaignConfig(design=DesignConfig(germ_set="g_unknown"))
        assert any("germ_set 'g_unknown' does not exist" in e for e in config.validate())

    def test_sequence_set_of_wrong_kind(self):
        """Test validation with germs given as fiducials."""
        config = CampaignConfig(design=DesignConfig(fiducial_set="g"))
        assert any("holds germs, not fiducials" in e for e in config.validate())

    def test_germ_set_of_wrong_mode(self):
        """Test validation with germs designed for another mode."""
        config = CampaignConfig(mode="crosstalk", design=DesignConfig(germ_set="g"))
        assert any("designed for none mode" in e for e in config.validate())

    def test_matching_published_sets(self):
        """Test validation with a consistent published design."""
        config = CampaignConfig(mode="memory", design=DesignConfig(fiducial_set="f_ref", germ_set="g_mem"))
        assert config.validate() == []

    def test_artifact_dict_drops_machine_settings(self):
        """Test that artifact values leave out paths and thread counts."""
        data = CampaignConfig(log_file="run.log", workers=4).artifact_dict()
        for key in ("output_dir", "log_file", "workers", "dataset_path"):
            assert key not in data
        assert "workers" not in data["design"]["ga"]
        assert "workers" not in data["reconstruction"]
        assert data["seed"] == 0
        assert data["noise"]["overrides"] == {}


class TestOptionSections:
    """Test cases for metrics and sweep options."""

    def test_metrics_defaults(self):
        options = MetricsOptions()
        assert options.validate() == []
        assert not options.halved
        assert options.correct_scope == "idle"

    def test_metrics_invalid_spread(self):
        assert any("correction_spread" in e for e in MetricsOptions(correction_spread=0.0).validate())

    @pytest.mark.parametrize("kwargs,fragment", [
        ({"scales": []}, "sweep scales are required but not provided"),
        ({"scales": [-0.5]}, "sweep scales must be >= 0"),
        ({"replicates": 0}, "sweep replicates must be >= 1"),
        ({"designs": ["x"]}, "sweep design 'x' does not exist"),
        ({"subsets": [0]}, "sweep subsets"),
    ])
    def test_sweep_invalid_values(self, kwargs, fragment):
        assert any(fragment in e for e in SweepOptions(**kwargs).validate())

    def test_sweep_design_mode_mismatch(self):
        config = CampaignConfig(sweep=SweepOptions(designs=["g_mem"]))
        assert any("sweep design 'g_mem' was designed for memory mode" in e for e in config.validate())


class TestConfigManager:
    """Test cases for ConfigManager class."""

    def test_init_default_env_file(self):
        """Test initialization with default env file."""
        assert ConfigManager().env_file == '.env'

    def test_initialize_defaults(self, manager):
        """Test initialization without a campaign file."""
        config = manager.initialize()
        assert config.mode == "none"
        assert manager.config is config

    def test_config_without_initialize(self):
        """Test accessing configuration before loading it."""
        with pytest.raises(RuntimeError) as exc_info:
            ConfigManager(env_file=None).config
        assert "Configuration not loaded" in str(exc_info.value)

    def test_load_json_file(self, manager, tmp_path):
        path = tmp_path / "campaign.json"
        path.write_text(json.dumps({"mode": "memory", "shots": 100, "design": {"L": 3}}))
        config = manager.initialize(str(path))
        assert config.mode == "memory"
        assert config.shots == 100
        assert config.design.L == 3

    def test_load_toml_file(self, manager, tmp_path):
        path = tmp_path / "campaign.toml"
        path.write_text('mode = "crosstalk"\nseed = 5\n\n[noise]\nscale = 2.0\n\n[design.ga]\npopulation_size = 12\n')
        config = manager.initialize(str(path))
        assert config.mode == "crosstalk"
        assert config.noise.scale == 2.0
        assert config.design.ga.population_size == 12

    def test_missing_file_is_critical(self, manager, tmp_path):
        """Test loading a campaign file that is not there."""
        with pytest.raises(ConfigurationValidationError) as exc_info:
            manager.initialize(str(tmp_path / "absent.toml"))
        assert exc_info.value.has_critical_errors
        assert "does not exist" in str(exc_info.value)

    def test_unparseable_file_is_warning(self, manager, tmp_path):
        path = tmp_path / "campaign.json"
        path.write_text("{not json")
        with pytest.raises(ConfigurationValidationError) as exc_info:
            manager.initialize(str(path))
        assert not exc_info.value.has_critical_errors
        assert exc_info.value.has_warnings
        assert "could not be parsed" in str(exc_info.value)

    def test_seed_cascades_to_sections(self, manager):
        """Test that one campaign seed reaches every random source."""
        config = manager.initialize(overrides={"seed": 11, "workers": 3})
        assert config.noise.seed == 11
        assert config.design.ga.seed == 11
        assert config.reconstruction.seed == 11
        assert config.design.ga.workers == 3
        assert config.reconstruction.workers == 3

    def test_section_seed_wins_over_campaign_seed(self, manager):
        config = manager.initialize(overrides={"seed": 11, "noise": {"seed": 2}})
        assert config.noise.seed == 2
        assert config.reconstruction.seed == 11

    def test_load_config_from_environment(self, tmp_path):
        """Test loading campaign values from environment variables."""
        with patch.dict(os.environ, {
            'CAGST_THREADS': '2',
            'CAGST_OUTPUT_DIR': str(tmp_path / "out"),
            'CAGST_SEED': '9',
            'CAGST_MODE': 'memory',
            'CAGST_SHOTS': '500',
        }, clear=True):
            config = ConfigManager(env_file=None).initialize()
        assert config.workers == 2
        assert config.output_dir == str(tmp_path / "out")
        assert config.seed == 9
        assert config.mode == "memory"
        assert config.shots == 500

    def test_environment_overrides_file_and_overrides_win(self, tmp_path):
        path = tmp_path / "campaign.json"
        path.write_text(json.dumps({"shots": 10, "seed": 1}))
        with patch.dict(os.environ, {'CAGST_SHOTS': '20', 'CAGST_SEED': '2'}, clear=True):
            config = ConfigManager(env_file=None).initialize(str(path), overrides={"seed": 3})
        assert config.shots == 20
        assert config.seed == 3

    def test_none_override_keeps_value(self, manager):
        config = manager.initialize(overrides={"shots": None, "output_dir": "runs"})
        assert config.shots == 0
        assert config.output_dir == "runs"

    def test_load_config_from_env_file(self, tmp_path):
        """Test that a .env file feeds the environment without overriding it."""
        env_file = tmp_path / ".env"
        env_file.write_text("CAGST_SHOTS=250\nCAGST_SEED=4\n")
        with patch.dict(os.environ, {'CAGST_SEED': '7'}, clear=True):
            config = ConfigManager(env_file=str(env_file)).initialize()
        assert config.shots == 250
        assert config.seed == 7

    def test_bad_integer_environment(self):
        with patch.dict(os.environ, {'CAGST_THREADS': 'many'}, clear=True):
            with pytest.raises(ConfigurationValidationError) as exc_info:
                ConfigManager(env_file=None).initialize()
        assert "CAGST_THREADS must be an integer" in str(exc_info.value)
        assert not exc_info.value.has_critical_errors

    def test_unknown_key(self, manager):
        """Test initialization with a key the campaign does not know."""
        with pytest.raises(ConfigurationValidationError) as exc_info:
            manager.initialize(overrides={"colour": "blue"})
        assert "Invalid campaign configuration" in str(exc_info.value)

    def test_validate_config_categorizes_errors(self, manager):
        """Test that validation splits critical errors from warnings."""
        config = CampaignConfig(output_dir="", shots=-5)
        with pytest.raises(ConfigurationValidationError) as exc_info:
            manager.validate_config(config)
        error = exc_info.value
        assert "output_dir is required but not provided" in error.critical_errors
        assert any("shots must be >= 0" in e for e in error.warning_errors)
        message = str(error)
        assert "Configuration validation failed:" in message
        assert "Critical errors (must be fixed):" in message
        assert "Warnings (should be reviewed):" in message

    def test_validate_config_success(self, manager):
        config = CampaignConfig(mode="crosstalk")
        assert manager.validate_config(config) is True
        assert manager.config is config
