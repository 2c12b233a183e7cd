"""
GM Tracker

Graph-matching multi-object tracking: a differentiable QP core, the
graph matching layer built on it, the learned affinity network, the
tracker, evaluation and file formats.

Version: 1.0.0
"""

__version__ = "1.0.0"
__description__ = "Differentiable graph-matching multi-object tracker"

from .config.settings import get_config
from .utils.logging_config import initialize_logging, get_logger

__all__ = [
    'get_config',
    'initialize_logging',
    'get_logger',
]
