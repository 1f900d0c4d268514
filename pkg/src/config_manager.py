"""
Configuration management for the Sparse Splitting Lab.
Handles loading, validation, defaults and command-line overrides of experiment configurations.
"""
import json
import os
import logging
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import Any, Dict

try:
    from .models import (
        ExperimentConfig, TrainConfig, BaselineConfig, GapConfig, MCConfig, EXPERIMENT_KINDS
    )
    from .exceptions import ConfigurationError, FileOperationError
    from .error_handler import ErrorHandler, create_error_context
except ImportError:
    from models import (
        ExperimentConfig, TrainConfig, BaselineConfig, GapConfig, MCConfig, EXPERIMENT_KINDS
    )
    from exceptions import ConfigurationError, FileOperationError
    from error_handler import ErrorHandler, create_error_context


logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "SPARSE_LAB_OUTPUT_DIR"

SECTIONS = {
    "train": TrainConfig,
    "baseline": BaselineConfig,
    "gap": GapConfig,
    "mc": MCConfig,
}

# Desk-scale training: minutes instead of hours for the depth-curve experiments.
DESK_TRAIN = TrainConfig(steps=3000, batch_size=200, learning_rate=0.01, eval_every=250)
DESK_BASELINE = BaselineConfig(steps=3000, learning_rate=0.01)


class ConfigValidationError(ConfigurationError):
    """Raised when configuration validation fails."""
    pass


def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    """Plain-JSON form of a configuration (nested sections as dicts)."""
    return asdict(config)


class ConfigManager:
    """Manages configuration loading, validation, and creation for experiments."""

    def __init__(self, config_dir: str = "config"):
        self.config_dir = Path(config_dir)
        self.error_handler = ErrorHandler(max_retries=2, base_delay=0.1)
        logger.debug(f"ConfigManager initialized with config dir: {config_dir}")

    def load_experiment_config(self, config_path: str) -> ExperimentConfig:
        """
        Load and validate an experiment configuration.

        Args:
            config_path: Path to the JSON configuration file

        Returns:
            ExperimentConfig: Validated configuration

        Raises:
            FileNotFoundError: If configuration file doesn't exist
            ConfigurationError: If configuration is invalid
        """
        context = create_error_context(
            "load_experiment_config",
            additional_info={"config_path": config_path}
        )

        if not os.path.exists(config_path):
            raise FileNotFoundError(f"Configuration file not found: {config_path}")

        try:
            config_data = self._load_json_config(config_path)
            config = self.parse_config(config_data, config_path)
            self.validate_config(config)
            logger.info(f"Loaded {config.experiment} configuration from {config_path}")
            return config

        except (FileNotFoundError, ConfigurationError, FileOperationError):
            raise
        except Exception as e:
            self.error_handler.handle_error(e, context, critical=True)
            raise ConfigurationError(f"Failed to load configuration from {config_path}: {e}") from e

    def create_default_config(self, experiment: str = "fig_layers") -> ExperimentConfig:
        """
        Desk-scale defaults for an experiment.

        Raises:
            ConfigValidationError: unknown experiment
        """
        if experiment not in EXPERIMENT_KINDS:
            raise ConfigValidationError(f"unknown experiment: {experiment}")

        config = ExperimentConfig(
            experiment=experiment,
            train=replace(DESK_TRAIN),
            baseline=replace(DESK_BASELINE),
            output_dir=os.environ.get(OUTPUT_DIR_ENV, "results"),
        )
        if experiment == "fig_gap":
            config = replace(config, rho=0.1, reference_tol=1e-10)
        logger.debug(f"Created default configuration for {experiment}")
        return config

    def save_config(self, config: ExperimentConfig, config_path: str) -> None:
        """
        Save a configuration to a JSON file.

        Args:
            config: Configuration to save
            config_path: Path where to save the configuration
        """
        directory = os.path.dirname(config_path)
        if directory:
            os.makedirs(directory, exist_ok=True)

        with open(config_path, 'w', encoding='utf-8') as file:
            json.dump(config_to_dict(config), file, indent=2, sort_keys=True)

        logger.info(f"Saved configuration to: {config_path}")

    def validate_config(self, config: ExperimentConfig) -> bool:
        """
        Validate an experiment configuration, collecting every problem.

        Returns:
            bool: True if configuration is valid

        Raises:
            ConfigValidationError: If configuration is invalid
        """
        errors = []

        if config.experiment not in EXPERIMENT_KINDS:
            errors.append(f"experiment must be one of {', '.join(EXPERIMENT_KINDS)}")

        for name in ("n", "m", "test_size"):
            value = getattr(config, name)
            if not isinstance(value, int) or value <= 0:
                errors.append(f"{name} must be a positive integer")

        if not 0.0 <= config.rho <= 1.0:
            errors.append("rho must lie in [0, 1]")
        if any(not 0.0 <= rho <= 1.0 for rho in config.layer_rhos):
            errors.append("layer_rhos must lie in [0, 1]")
        if config.sigma <= 0:
            errors.append("sigma must be positive")
        if config.lam < 0:
            errors.append("lam must be non-negative")
        if config.reference_tol <= 0:
            errors.append("reference_tol must be positive")

        if not config.depths:
            errors.append("depths must be a non-empty list")
        elif any(not isinstance(d, int) or d < 0 for d in config.depths):
            errors.append("depths must be non-negative integers")
        elif list(config.depths) != sorted(config.depths):
            errors.append("depths must be sorted ascending")

        train = config.train
        if train.steps < 0:
            errors.append("train.steps must be non-negative")
        if train.batch_size < 1:
            errors.append("train.batch_size must be a positive integer")
        if train.learning_rate <= 0:
            errors.append("train.learning_rate must be positive")
        if train.adagrad_epsilon <= 0:
            errors.append("train.adagrad_epsilon must be positive")
        if train.eval_every < 1:
            errors.append("train.eval_every must be a positive integer")
        if train.mu < 0:
            errors.append("train.mu must be non-negative")
        if train.validation_size < 1:
            errors.append("train.validation_size must be a positive integer")
        if train.rotation_learning_rate is not None and train.rotation_learning_rate < 0:
            errors.append("train.rotation_learning_rate must be non-negative")
        if config.baseline.steps < 0 or config.baseline.learning_rate <= 0:
            errors.append("baseline needs non-negative steps and a positive learning_rate")

        if config.experiment == "fig_adverse" and (config.n % 2 or config.m // 2 < config.n // 2):
            errors.append("fig_adverse needs an even n with m/2 >= n/2")
        if config.experiment == "custom" and not config.dict_path:
            errors.append("custom experiment requires dict_path")

        gap = config.gap
        if min(gap.n, gap.m, gap.n_seeds) < 1 or gap.iterations < 0:
            errors.append("gap sizes must be positive")
        elif config.experiment == "fig_gap" and (gap.n % 2 or gap.m // 2 < gap.n // 2):
            errors.append("gap.n must be even with gap.m/2 >= gap.n/2")

        mc = config.mc
        trial_counts = (mc.wishart_trials, mc.chi_trials, mc.lemma1_trials, mc.lemma2_trials)
        if any(t < 100 for t in trial_counts):
            errors.append("Monte-Carlo trial counts must be at least 100")
        if any(len(size) != 2 or size[0] < 2 or size[1] < 1 for size in mc.chi_sizes):
            errors.append("mc.chi_sizes entries must be [K >= 2, p >= 1]")
        if any(not 0.0 < d < 1.0 for d in list(mc.lemma1_deltas) + list(mc.lemma2_deltas)):
            errors.append("Monte-Carlo deltas must lie in (0, 1)")
        if len(mc.lemma1_deltas) < 2:
            errors.append("mc.lemma1_deltas needs at least two values")
        if not 0.0 < mc.unitarity_delta < 1.0 or mc.unitarity_draws < 1:
            errors.append("mc.unitarity_delta must lie in (0, 1) with at least one draw")

        if errors:
            error_msg = f"Configuration validation failed for {config.experiment}: " + "; ".join(errors)
            raise ConfigValidationError(error_msg)

        return True

    def apply_overrides(self, config: ExperimentConfig, overrides: Dict[str, Any]) -> ExperimentConfig:
        """
        Return a copy with overrides applied; keys are field names or
        "section.field" for nested sections. None values are skipped.

        Raises:
            ConfigValidationError: unknown key or invalid result
        """
        top: Dict[str, Any] = {}
        nested: Dict[str, Dict[str, Any]] = {}
        for key, value in overrides.items():
            if value is None:
                continue
            if "." in key:
                section, name = key.split(".", 1)
                if section not in SECTIONS or name not in {f.name for f in fields(SECTIONS[section])}:
                    raise ConfigValidationError(f"unknown configuration key: {key}")
                nested.setdefault(section, {})[name] = value
            else:
                if key not in {f.name for f in fields(ExperimentConfig)}:
                    raise ConfigValidationError(f"unknown configuration key: {key}")
                top[key] = value

        for section, values in nested.items():
            top[section] = replace(getattr(config, section), **values)
        updated = replace(config, **top)
        self.validate_config(updated)
        return updated

    def parse_config(self, config_data: Dict[str, Any], config_path: str = "<dict>") -> ExperimentConfig:
        """
        Parse configuration data, filling defaults for missing fields.

        Raises:
            ConfigValidationError: If a field has the wrong type or is unknown
        """
        experiment = config_data.get("experiment", "fig_layers")
        if experiment not in EXPERIMENT_KINDS:
            raise ConfigValidationError(f"Unknown experiment {experiment!r} in {config_path}")
        base = self.create_default_config(experiment)
        known = {f.name for f in fields(ExperimentConfig)}

        unknown = sorted(set(config_data) - known)
        if unknown:
            raise ConfigValidationError(f"Unknown configuration keys in {config_path}: {', '.join(unknown)}")

        try:
            values: Dict[str, Any] = {}
            for key, value in config_data.items():
                if key in SECTIONS:
                    if not isinstance(value, dict):
                        raise TypeError(f"{key} must be an object")
                    values[key] = replace(getattr(base, key), **value)
                else:
                    values[key] = value
            config = replace(base, **values)
        except TypeError as e:
            raise ConfigValidationError(f"Invalid field in {config_path}: {e}") from e

        config.layer_rhos = [float(r) for r in config.layer_rhos]
        return config

    def _load_json_config(self, config_path: str) -> dict:
        """
        Load JSON configuration with error handling.

        Raises:
            ConfigurationError: If JSON loading fails
        """
        try:
            with open(config_path, 'r', encoding='utf-8') as file:
                return json.load(file)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Invalid JSON in {config_path}: {e}") from e
        except (OSError, IOError) as e:
            raise FileOperationError(f"Failed to read configuration file {config_path}: {e}") from e
