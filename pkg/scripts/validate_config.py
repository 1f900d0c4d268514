#!/usr/bin/env python3
"""
Configuration Validation Script for the Sparse Splitting Lab

Validates the experiment configurations under config/ and the environment
before a long run is started.
"""

import os
import sys
from pathlib import Path

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

try:
    from config_manager import ConfigManager, OUTPUT_DIR_ENV
    from exceptions import ConfigurationError
except ImportError as e:
    print(f"❌ Error importing modules: {e}")
    print("Please ensure you're running this from the project root directory.")
    sys.exit(1)


class ConfigValidator:
    """Validates Sparse Splitting Lab configuration."""

    def __init__(self, config_dir: str = "config"):
        self.config_dir = Path(config_dir)
        self.errors = []
        self.warnings = []
        self.info = []

    def validate_environment(self) -> bool:
        """Check the optional environment variables and the output directory."""
        print("🔍 Validating environment variables...")

        try:
            from dotenv import load_dotenv
            load_dotenv()
        except ImportError:
            self.warnings.append("python-dotenv not installed, .env files are ignored")

        output_dir = Path(os.environ.get(OUTPUT_DIR_ENV, "results"))
        self.info.append(f"  {OUTPUT_DIR_ENV}: {output_dir}")
        self.info.append(f"  SPARSE_LAB_LOG_LEVEL: {os.environ.get('SPARSE_LAB_LOG_LEVEL', 'INFO')}")

        if output_dir.exists() and not output_dir.is_dir():
            self.errors.append(f"Output path exists but is not a directory: {output_dir}")
        return len(self.errors) == 0

    def validate_experiment_configs(self) -> bool:
        """Load and validate every config/*.json."""
        print("🔍 Validating experiment configurations...")

        config_files = sorted(self.config_dir.glob("*.json"))
        if not config_files:
            self.errors.append(f"No experiment configuration files found in {self.config_dir}")
            return False

        manager = ConfigManager(str(self.config_dir))
        for config_file in config_files:
            try:
                config = manager.load_experiment_config(str(config_file))
            except (ConfigurationError, FileNotFoundError) as e:
                self.errors.append(f"{config_file.name}: {e}")
                continue

            self.info.append(f"✓ {config_file.name}: {config.experiment} (n={config.n}, m={config.m}, "
                             f"depths={config.depths})")
            if config.experiment in ("fig_layers", "fig_adverse", "custom") and config.train.steps > 20000:
                self.warnings.append(f"{config_file.name}: {config.train.steps} training steps per network "
                                     f"will take hours")
            if config.dict_path and not Path(config.dict_path).exists():
                self.errors.append(f"{config_file.name}: dictionary file not found: {config.dict_path}")

        return len(self.errors) == 0

    def run_validation(self) -> bool:
        """Run all validation checks."""
        print("🚀 Starting Sparse Splitting Lab configuration validation...\n")
        checks = [self.validate_environment, self.validate_experiment_configs]
        all_passed = True
        for check in checks:
            try:
                if not check():
                    all_passed = False
            except Exception as e:
                self.errors.append(f"Validation check failed: {e}")
                all_passed = False
            print()
        return all_passed

    def print_summary(self) -> bool:
        """Print what was found, grouped by severity."""
        print("=" * 60)
        print("📋 VALIDATION SUMMARY")
        print("=" * 60)

        sections = (("✅ Configurations", self.info, "  "),
                    ("⚠️  Warnings", self.warnings, "  - "),
                    ("❌ Errors", self.errors, "  - "))
        for title, items, bullet in sections:
            if items:
                print(f"\n{title}:")
                print("\n".join(f"{bullet}{item}" for item in items))

        print("\n" + "=" * 60)
        if self.errors:
            print(f"❌ {len(self.errors)} problem(s) found; fix them before starting a run.")
            return False
        print("🎉 All configurations are valid")
        print("  python -m src.main mc-verify --config config/mc_verify.json")
        print("  python -m src.main fig-layers --config config/fig_layers.json")
        return True


def main() -> int:
    validator = ConfigValidator(sys.argv[1] if len(sys.argv) > 1 else "config")
    try:
        passed = validator.run_validation()
    except KeyboardInterrupt:
        print("\n⚠️  Validation interrupted.")
        return 1
    return 0 if validator.print_summary() and passed else 1


if __name__ == "__main__":
    sys.exit(main())
