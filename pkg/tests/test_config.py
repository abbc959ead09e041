"""
Unit tests for geoward Config class.

Tests environment loading, validation, runtime overrides and the settings
snapshot recorded in run manifests.
"""

import pytest
from unittest.mock import patch

from geoward.config import Config
from geoward.core.exceptions import ConfigurationError


class TestConfigInitialization:
    """Test Config class initialization and environment loading."""

    def test_explicit_environment(self, geoward_env):
        """Every GEOWARD_ variable is honoured."""
        with patch('geoward.config.load_dotenv'):
            config = Config()

            assert config.threads == 3
            assert config.log_level == "DEBUG"
            assert config.console_output is False
            assert config.metric_cap == 1200
            assert config.vulnerable_threshold == 0.01
            assert config.gaussian_convention == "printed"
            assert config.metric_batch == 16
            assert config.verify_residuals is False

    def test_minimal_env_defaults(self, minimal_env):
        """Defaults apply when nothing is set."""
        with patch('geoward.config.load_dotenv'):
            config = Config()

            assert config.threads >= 1
            assert config.log_level == "INFO"
            assert config.console_output is True
            assert config.metric_cap == 5000
            assert config.vulnerable_threshold == 1e-3
            assert config.gaussian_convention == "variance"
            assert config.metric_batch == 64
            assert config.verify_residuals is True

    @pytest.mark.parametrize("name,value", [
        ("GEOWARD_THREADS", "0"),
        ("GEOWARD_THREADS", "many"),
        ("GEOWARD_METRIC_CAP", "-5"),
        ("GEOWARD_VULNERABLE_THRESHOLD", "0"),
        ("GEOWARD_VULNERABLE_THRESHOLD", "tiny"),
        ("GEOWARD_GAUSSIAN_CONVENTION", "scaled"),
        ("GEOWARD_LOG_LEVEL", "LOUD"),
    ])
    def test_invalid_values(self, minimal_env, monkeypatch, name, value):
        """Bad environment values are configuration errors, not silent defaults."""
        monkeypatch.setenv(name, value)
        with patch('geoward.config.load_dotenv'):
            with pytest.raises(ConfigurationError) as exc_info:
                Config()

            assert exc_info.value.exit_code == 2

    def test_case_insensitive_convention(self, minimal_env, monkeypatch):
        monkeypatch.setenv("GEOWARD_GAUSSIAN_CONVENTION", " Printed ")
        with patch('geoward.config.load_dotenv'):
            assert Config().gaussian_convention == "printed"


class TestConfigOverrides:
    """CLI flags take precedence over the environment."""

    def test_overrides_win(self, geoward_env):
        with patch('geoward.config.load_dotenv'):
            config = Config()
            config.apply_overrides(threads=1, log_level="warning", gaussian_convention="variance", metric_batch=8)

            assert config.threads == 1
            assert config.log_level == "WARNING"
            assert config.gaussian_convention == "variance"
            assert config.metric_batch == 8

    def test_none_keeps_current(self, geoward_env):
        with patch('geoward.config.load_dotenv'):
            config = Config()
            config.apply_overrides()

            assert config.threads == 3
            assert config.gaussian_convention == "printed"

    @pytest.mark.parametrize("overrides", [
        {"threads": 0},
        {"log_level": "chatty"},
        {"vulnerable_threshold": -1.0},
        {"gaussian_convention": "other"},
        {"metric_batch": 0},
    ])
    def test_invalid_overrides(self, minimal_env, overrides):
        with patch('geoward.config.load_dotenv'):
            config = Config()
            with pytest.raises(ConfigurationError):
                config.apply_overrides(**overrides)


class TestConfigValidation:
    def test_validate_defaults(self, minimal_env):
        with patch('geoward.config.load_dotenv'):
            assert Config().validate() is True

    def test_validate_catches_broken_state(self, minimal_env):
        with patch('geoward.config.load_dotenv'):
            config = Config()
            config.metric_batch = 0
            assert config.validate() is False

    def test_describe_snapshot(self, geoward_env):
        with patch('geoward.config.load_dotenv'):
            settings = Config().describe()

            assert settings["metric_cap"] == 1200
            assert settings["gaussian_convention"] == "printed"
            assert set(settings) == {
                "threads", "log_level", "metric_cap", "vulnerable_threshold",
                "metric_batch", "gaussian_convention", "verify_residuals",
            }

    def test_repr(self, minimal_env):
        with patch('geoward.config.load_dotenv'):
            assert "gaussian=variance" in repr(Config())
