"""
Tests for configuration management.
"""
import json
import os
import tempfile
import pytest
from pathlib import Path
from unittest.mock import patch
from src.config_manager import ConfigManager, ConfigValidationError, config_to_dict, OUTPUT_DIR_ENV
from src.exceptions import ConfigurationError
from src.models import ExperimentConfig, TrainConfig

REPO_CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"


class TestConfigManager:
    """Test cases for ConfigManager class."""

    def setup_method(self):
        """Set up test environment before each test."""
        self.temp_dir = tempfile.mkdtemp()
        self.config_manager = ConfigManager(self.temp_dir)

    def teardown_method(self):
        """Clean up test environment after each test."""
        import shutil
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def write_config(self, filename: str, data: dict) -> str:
        config_path = os.path.join(self.temp_dir, filename)
        with open(config_path, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2)
        return config_path

    def test_load_experiment_config_success(self):
        config_path = self.write_config("layers.json", {
            "experiment": "fig_layers",
            "n": 32,
            "m": 48,
            "depths": [0, 1, 3],
            "train": {"steps": 100, "batch_size": 25}
        })

        config = self.config_manager.load_experiment_config(config_path)

        assert isinstance(config, ExperimentConfig)
        assert config.n == 32 and config.m == 48
        assert config.depths == [0, 1, 3]
        assert config.train.steps == 100
        assert config.train.batch_size == 25
        # untouched fields keep the desk-scale defaults
        assert config.train.learning_rate == 0.01
        assert config.baseline.steps == 3000

    def test_load_experiment_config_file_not_found(self):
        with pytest.raises(FileNotFoundError):
            self.config_manager.load_experiment_config("nonexistent.json")

    def test_load_experiment_config_invalid_json(self):
        config_path = os.path.join(self.temp_dir, "invalid.json")
        with open(config_path, 'w') as f:
            f.write("{ invalid json }")

        with pytest.raises(ConfigurationError):
            self.config_manager.load_experiment_config(config_path)

    def test_unknown_keys(self):
        with pytest.raises(ConfigValidationError):
            self.config_manager.load_experiment_config(self.write_config("a.json", {"depth": 3}))
        with pytest.raises(ConfigValidationError):
            self.config_manager.load_experiment_config(self.write_config("b.json", {"train": {"epochs": 3}}))
        with pytest.raises(ConfigValidationError):
            self.config_manager.load_experiment_config(self.write_config("c.json", {"experiment": "fig_9"}))

    def test_section_must_be_object(self):
        with pytest.raises(ConfigValidationError):
            self.config_manager.load_experiment_config(self.write_config("a.json", {"train": 5}))

    def test_create_default_config(self):
        config = self.config_manager.create_default_config("fig_layers")

        assert config.experiment == "fig_layers"
        assert (config.n, config.m) == (64, 100)
        assert config.depths == [0, 1, 2, 4, 7]
        assert config.train.steps == 3000
        assert self.config_manager.validate_config(config)

    def test_create_default_config_gap(self):
        config = self.config_manager.create_default_config("fig_gap")
        assert config.rho == 0.1
        assert config.reference_tol == 1e-10

    def test_create_default_config_unknown(self):
        with pytest.raises(ConfigValidationError):
            self.config_manager.create_default_config("fig_9")

    def test_default_output_dir_from_environment(self):
        with patch.dict(os.environ, {OUTPUT_DIR_ENV: "/tmp/sparse-out"}):
            config = self.config_manager.create_default_config()
        assert config.output_dir == "/tmp/sparse-out"

    def test_save_and_reload(self):
        config = self.config_manager.create_default_config("fig_adverse")
        config_path = os.path.join(self.temp_dir, "nested", "saved.json")

        self.config_manager.save_config(config, config_path)
        loaded = self.config_manager.load_experiment_config(config_path)

        assert config_to_dict(loaded) == config_to_dict(config)

    @pytest.mark.parametrize("field, value", [
        ("n", 0),
        ("m", -3),
        ("rho", 1.5),
        ("sigma", 0.0),
        ("lam", -0.1),
        ("depths", []),
        ("depths", [2, 1]),
        ("depths", [0, -1]),
        ("layer_rhos", [0.1, 2.0]),
        ("reference_tol", 0.0),
    ])
    def test_validate_config_rejects(self, field, value):
        config = self.config_manager.create_default_config()
        setattr(config, field, value)
        with pytest.raises(ConfigValidationError):
            self.config_manager.validate_config(config)

    def test_validate_collects_every_error(self):
        config = self.config_manager.create_default_config()
        config.n = 0
        config.sigma = -1.0
        config.train = TrainConfig(learning_rate=0.0)

        with pytest.raises(ConfigValidationError) as info:
            self.config_manager.validate_config(config)

        message = str(info.value)
        assert "n must be a positive integer" in message
        assert "sigma must be positive" in message
        assert "train.learning_rate must be positive" in message

    def test_validate_adverse_dimensions(self):
        config = self.config_manager.create_default_config("fig_adverse")
        config.n = 63
        with pytest.raises(ConfigValidationError):
            self.config_manager.validate_config(config)

    def test_validate_custom_needs_dict_path(self):
        config = self.config_manager.create_default_config("custom")
        with pytest.raises(ConfigValidationError):
            self.config_manager.validate_config(config)
        config.dict_path = "D.csv"
        assert self.config_manager.validate_config(config)

    def test_validate_monte_carlo_sizes(self):
        config = self.config_manager.create_default_config("mc_verify")
        config.mc.chi_trials = 50
        with pytest.raises(ConfigValidationError):
            self.config_manager.validate_config(config)

        config = self.config_manager.create_default_config("mc_verify")
        config.mc.lemma1_deltas = [0.01]
        with pytest.raises(ConfigValidationError):
            self.config_manager.validate_config(config)

    def test_apply_overrides(self):
        config = self.config_manager.create_default_config()
        updated = self.config_manager.apply_overrides(config, {
            "seed": 7,
            "lam": None,
            "train.steps": 10,
            "train.greedy": True,
        })

        assert updated.seed == 7
        assert updated.lam == config.lam
        assert updated.train.steps == 10
        assert updated.train.greedy
        # the original is left alone
        assert config.seed == 42
        assert config.train.steps == 3000

    def test_apply_overrides_unknown_key(self):
        config = self.config_manager.create_default_config()
        with pytest.raises(ConfigValidationError):
            self.config_manager.apply_overrides(config, {"layers": 3})
        with pytest.raises(ConfigValidationError):
            self.config_manager.apply_overrides(config, {"optimizer.lr": 0.1})

    def test_apply_overrides_validates(self):
        config = self.config_manager.create_default_config()
        with pytest.raises(ConfigValidationError):
            self.config_manager.apply_overrides(config, {"train.batch_size": 0})

    @pytest.mark.parametrize("filename", ["fig_layers.json", "fig_adverse.json", "fig_gap.json", "mc_verify.json"])
    def test_shipped_configs_are_valid(self, filename):
        config = self.config_manager.load_experiment_config(str(REPO_CONFIG_DIR / filename))
        assert config.experiment == filename[:-len(".json")]
