"""Configuration package for the graph-matching tracker."""

from .settings import (
    get_config, ConfigManager, TrackerConfig, MatchingConfig, GcnConfig,
    TrainConfig, LoggingConfig, RunSettings,
)

__all__ = [
    'get_config', 'ConfigManager', 'TrackerConfig', 'MatchingConfig',
    'GcnConfig', 'TrainConfig', 'LoggingConfig', 'RunSettings',
]
