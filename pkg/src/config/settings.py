"""
Application configuration settings.

This module provides centralized configuration management for the tracker:
one dataclass per concern, loaded from a flat ``section.key = value`` file,
then environment variables, then command-line overrides.
"""

import os
import logging
import typing
from pathlib import Path
from typing import Dict, Any, Optional, List
from dataclasses import dataclass, fields, asdict

from ..models.errors import ConfigError


CAMERA_STATIC = "static"
CAMERA_MOVING = "moving"


@dataclass
class TrackerConfig:
    """Online association loop: gates, thresholds, track lifecycle."""
    kappa: float = 9.4877  # chi-square 4 dof, 0.95 quantile
    sigma: Optional[float] = None  # resolved from camera_motion when unset
    delta: int = 100
    iou_fallback_min: float = 0.3
    camera_motion: str = CAMERA_STATIC
    interpolate: bool = False
    matcher: str = "graph"
    aggregation: str = "mean"
    moving_average_alpha: float = 0.8
    std_weight_position: float = 1.0 / 20
    std_weight_velocity: float = 1.0 / 160

    @property
    def appearance_threshold(self) -> float:
        if self.sigma is not None:
            return self.sigma
        return 0.6 if self.camera_motion == CAMERA_MOVING else 0.7

    @property
    def use_geometry(self) -> bool:
        return self.camera_motion == CAMERA_STATIC

    def validate(self) -> None:
        if self.kappa <= 0:
            raise ConfigError(f"tracker.kappa must be > 0, got {self.kappa}")
        if not 0.0 < self.appearance_threshold < 1.0:
            raise ConfigError(f"tracker.sigma must lie in (0, 1), got {self.appearance_threshold}")
        if self.delta < 1:
            raise ConfigError(f"tracker.delta must be >= 1, got {self.delta}")
        if self.camera_motion not in (CAMERA_STATIC, CAMERA_MOVING):
            raise ConfigError(f"tracker.camera_motion must be static or moving, got {self.camera_motion}")
        if self.matcher not in ("graph", "hungarian"):
            raise ConfigError(f"tracker.matcher must be graph or hungarian, got {self.matcher}")


@dataclass
class MatchingConfig:
    """Graph-matching layer and its QP solver."""
    tol: float = 1e-8
    max_iter: int = 100
    polish: bool = True
    temperature: float = 1e-3

    def validate(self) -> None:
        if self.tol <= 0:
            raise ConfigError("matching.tol must be > 0")
        if self.temperature <= 0:
            raise ConfigError("matching.temperature must be > 0")


@dataclass
class GcnConfig:
    """Cross-graph GCN."""
    use_geometry: bool = True
    num_layers: int = 1
    aggregation: str = "sum"

    def validate(self) -> None:
        if self.num_layers < 0:
            raise ConfigError("gcn.num_layers must be >= 0")
        if self.aggregation != "sum":
            raise ConfigError(f"gcn.aggregation supports only sum, got {self.aggregation}")


@dataclass
class TrainConfig:
    """Optimizer and loss settings for the matching network."""
    learning_rate: float = 5e-5
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    temperature: float = 1e-3
    epochs: int = 1
    hidden_width: int = 512
    output_width: int = 512
    activation: str = "relu"
    max_history: int = 30
    qp_tol: float = 1e-8

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ConfigError("train.temperature must be > 0")
        if self.learning_rate < 0:
            raise ConfigError("train.learning_rate must be >= 0")
        if self.activation not in ("relu", "identity"):
            raise ConfigError(f"train.activation must be relu or identity, got {self.activation}")


@dataclass
class LoggingConfig:
    """Logging configuration."""
    level: str = "INFO"
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    file_enabled: bool = False
    console_enabled: bool = True
    log_dir: str = ""
    max_file_size: int = 10 * 1024 * 1024  # 10MB
    backup_count: int = 5


@dataclass
class RunSettings:
    """Seed and file locations for a single run."""
    seed: int = 0
    feature_format: str = "binary"
    detections: str = ""
    features: str = ""
    ground_truth: str = ""
    output: str = ""
    checkpoint: str = ""
    warp: str = ""


SECTIONS = ("tracker", "matching", "gcn", "train", "logging", "run")


def _coerce(raw: str, annotation: Any, key: str) -> Any:
    text = raw.strip()
    optional = typing.get_origin(annotation) is typing.Union and type(None) in typing.get_args(annotation)
    if optional:
        if text.lower() in ("", "none", "null"):
            return None
        annotation = next(a for a in typing.get_args(annotation) if a is not type(None))
    try:
        if annotation is bool:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if annotation is int:
            return int(text)
        if annotation is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}")
    return text


class ConfigManager:
    """
    Configuration manager for the tracker.

    Handles loading, saving, and accessing configuration from a key=value file,
    environment variables (GMT_LOG_LEVEL, GMT_SEED) and command-line overrides.
    Unknown keys are rejected.
    """

    def __init__(self, config_file: Optional[str] = None, load_environment: bool = True):
        self.tracker = TrackerConfig()
        self.matching = MatchingConfig()
        self.gcn = GcnConfig()
        self.train = TrainConfig()
        self.logging = LoggingConfig()
        self.run = RunSettings()

        if config_file:
            self.load_config(config_file)
        if load_environment:
            self._load_from_environment()

    def load_config(self, config_file: str) -> None:
        """Load configuration from a flat key=value file."""
        path = Path(config_file)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}")

        for number, line in enumerate(lines, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{number}: expected key = value")
            key, value = stripped.split("=", 1)
            self.set_value(key.strip(), value)

    def apply_overrides(self, overrides: List[str]) -> None:
        """Apply ``section.key=value`` strings from the command line."""
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override must be section.key=value, got {item!r}")
            key, value = item.split("=", 1)
            self.set_value(key.strip(), value)

    def set_value(self, dotted_key: str, raw: str) -> None:
        section_name, _, key = dotted_key.partition(".")
        if section_name not in SECTIONS or not key:
            raise ConfigError(f"unknown config key: {dotted_key}")
        section = getattr(self, section_name)
        hints = typing.get_type_hints(type(section))
        if key not in hints:
            raise ConfigError(f"unknown config key: {dotted_key}")
        setattr(section, key, _coerce(raw, hints[key], dotted_key))

    def _load_from_environment(self) -> None:
        """Load configuration from environment variables."""
        if os.getenv("GMT_LOG_LEVEL"):
            self.logging.level = os.getenv("GMT_LOG_LEVEL").upper()
        if os.getenv("GMT_SEED"):
            self.set_value("run.seed", os.getenv("GMT_SEED"))

    def validate(self) -> None:
        self.tracker.validate()
        self.matching.validate()
        self.gcn.validate()
        self.train.validate()

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def save_config(self, config_file: str) -> None:
        """Write every key with its current value."""
        lines = []
        for name in SECTIONS:
            section = getattr(self, name)
            for f in fields(section):
                value = getattr(section, f.name)
                lines.append(f"{name}.{f.name} = {'none' if value is None else value}")
        try:
            Path(config_file).write_text("\n".join(lines) + "\n", encoding="utf-8")
        except OSError as e:
            logging.error(f"Failed to save config file: {e}")
            raise ConfigError(f"cannot write config file {config_file}: {e}")


# Global configuration instance
_config: Optional[ConfigManager] = None


def get_config() -> ConfigManager:
    """Get the global configuration instance."""
    global _config
    if _config is None:
        _config = ConfigManager()
    return _config
