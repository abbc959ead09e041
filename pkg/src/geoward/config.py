"""
Geoward Configuration Management

Handles application configuration, environment variables, and settings.
"""

import os
from typing import Any, Optional

from dotenv import load_dotenv

from .core.exceptions import ConfigurationError

# Load environment variables from .env file; explicit environment wins
load_dotenv(override=False)


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ("true", "1", "yes", "on")


class Config:
    """Configuration class for geoward."""

    allowed_gaussian_conventions = {"variance", "printed"}
    allowed_log_levels = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}

    def __init__(self):
        """Initialize configuration with environment variables and defaults."""
        # Worker threads for per-example work; reductions never depend on it
        self.threads = self._parse_int("GEOWARD_THREADS", os.cpu_count() or 1, minimum=1)

        # Logging / console
        self.log_level = os.getenv("GEOWARD_LOG_LEVEL", "INFO").upper()
        if self.log_level not in self.allowed_log_levels:
            raise ConfigurationError(
                f"Unsupported log level: '{self.log_level}'. "
                f"Supported levels: {sorted(self.allowed_log_levels)}."
            )
        self.console_output = _env_bool("GEOWARD_CONSOLE_OUTPUT", "true")

        # Metric geometry
        self.metric_cap = self._parse_int("GEOWARD_METRIC_CAP", 5000, minimum=1)
        self.vulnerable_threshold = self._parse_float("GEOWARD_VULNERABLE_THRESHOLD", 1e-3)
        self.metric_batch = self._parse_int("GEOWARD_METRIC_BATCH", 64, minimum=1)

        self.gaussian_convention = os.getenv("GEOWARD_GAUSSIAN_CONVENTION", "variance").strip().lower()
        if self.gaussian_convention not in self.allowed_gaussian_conventions:
            raise ConfigurationError(
                f"Unsupported Gaussian convention: '{self.gaussian_convention}'. "
                f"Supported: {sorted(self.allowed_gaussian_conventions)}."
            )

        # Residual checks on every shifted solve
        self.verify_residuals = _env_bool("GEOWARD_VERIFY_RESIDUALS", "true")

    @staticmethod
    def _parse_int(name: str, default: int, minimum: int) -> int:
        raw = os.getenv(name, "").strip()
        if not raw:
            return default
        try:
            value = int(raw)
        except ValueError:
            raise ConfigurationError(f"{name} must be an integer, got '{raw}'")
        if value < minimum:
            raise ConfigurationError(f"{name} must be >= {minimum}, got {value}")
        return value

    @staticmethod
    def _parse_float(name: str, default: float) -> float:
        raw = os.getenv(name, "").strip()
        if not raw:
            return default
        try:
            value = float(raw)
        except ValueError:
            raise ConfigurationError(f"{name} must be a number, got '{raw}'")
        if not value > 0:
            raise ConfigurationError(f"{name} must be positive, got {value}")
        return value

    def apply_overrides(
        self,
        threads: Optional[int] = None,
        log_level: Optional[str] = None,
        vulnerable_threshold: Optional[float] = None,
        gaussian_convention: Optional[str] = None,
        metric_batch: Optional[int] = None,
    ) -> None:
        """Apply runtime overrides (e.g., from CLI flags). CLI > env > defaults."""
        if threads is not None:
            if threads < 1:
                raise ConfigurationError(f"--threads must be >= 1, got {threads}")
            self.threads = threads

        if log_level:
            level = log_level.upper().strip()
            if level not in self.allowed_log_levels:
                raise ConfigurationError(f"Unsupported log level: '{log_level}'.")
            self.log_level = level

        if vulnerable_threshold is not None:
            if not vulnerable_threshold > 0:
                raise ConfigurationError("Vulnerable threshold must be positive.")
            self.vulnerable_threshold = vulnerable_threshold

        if gaussian_convention:
            convention = gaussian_convention.lower().strip()
            if convention not in self.allowed_gaussian_conventions:
                raise ConfigurationError(
                    f"Unsupported Gaussian convention: '{gaussian_convention}'. "
                    f"Supported: {sorted(self.allowed_gaussian_conventions)}."
                )
            self.gaussian_convention = convention

        if metric_batch is not None:
            if metric_batch < 1:
                raise ConfigurationError("Metric batch must be >= 1.")
            self.metric_batch = metric_batch

    def validate(self) -> bool:
        """Validate that the configuration is usable."""
        is_valid = True
        if self.threads < 1:
            is_valid = False
        if self.metric_cap < 1 or self.metric_batch < 1:
            is_valid = False
        if not self.vulnerable_threshold > 0:
            is_valid = False
        if self.gaussian_convention not in self.allowed_gaussian_conventions:
            is_valid = False
        return is_valid

    def describe(self) -> dict[str, Any]:
        """Resolved settings, as recorded in run manifests."""
        return {
            "threads": self.threads,
            "log_level": self.log_level,
            "metric_cap": self.metric_cap,
            "vulnerable_threshold": self.vulnerable_threshold,
            "metric_batch": self.metric_batch,
            "gaussian_convention": self.gaussian_convention,
            "verify_residuals": self.verify_residuals,
        }

    def __repr__(self) -> str:
        return (f"Config(threads={self.threads}, "
                f"metric_cap={self.metric_cap}, "
                f"threshold={self.vulnerable_threshold}, "
                f"gaussian={self.gaussian_convention})")


# Global config instance
config = Config()
