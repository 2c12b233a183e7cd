"""
Logging configuration and utilities.

This module provides centralized logging configuration for the tracker with
console output, optional rotating log files, and timing of long operations.
"""

import logging
import logging.handlers
import sys
import time
from pathlib import Path
from typing import Optional

import psutil

from .helpers import format_duration


class LogManager:
    """
    Centralized logging manager for the application.

    Configures the root logger from a LoggingConfig: console handler on
    stderr, and a rotating file handler when file logging is enabled.
    """

    def __init__(self, config=None):
        self.config = config
        log_dir = config.logging.log_dir if config and config.logging.log_dir else None
        self.log_dir = Path(log_dir) if log_dir else Path.home() / ".gmtracker" / "logs"

        # Initialize logging
        self.setup_logging()

    def setup_logging(self) -> None:
        """Configure application logging."""
        root_logger = logging.getLogger()
        root_logger.handlers.clear()

        level = getattr(logging, self.config.logging.level.upper() if self.config else "INFO", logging.INFO)
        root_logger.setLevel(level)

        formatter = logging.Formatter(
            self.config.logging.format if self.config else
            "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
        )

        # Console handler; stdout carries command results
        if not self.config or self.config.logging.console_enabled:
            console_handler = logging.StreamHandler(sys.stderr)
            console_handler.setFormatter(formatter)
            console_handler.setLevel(level)
            root_logger.addHandler(console_handler)

        # File handler with rotation
        if self.config and self.config.logging.file_enabled:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            file_handler = logging.handlers.RotatingFileHandler(
                self.log_dir / "gmtracker.log",
                maxBytes=self.config.logging.max_file_size,
                backupCount=self.config.logging.backup_count,
                encoding='utf-8'
            )
            file_handler.setFormatter(formatter)
            file_handler.setLevel(level)
            root_logger.addHandler(file_handler)
            logging.getLogger(__name__).info(f"Log files location: {self.log_dir}")

        logging.getLogger(__name__).debug("Logging system initialized")

    def set_level(self, level: str) -> None:
        """Change the logging level dynamically."""
        numeric_level = getattr(logging, level.upper())
        logging.getLogger().setLevel(numeric_level)
        for handler in logging.getLogger().handlers:
            handler.setLevel(numeric_level)


def get_logger(name: str) -> logging.Logger:
    """
    Get a logger instance with the specified name.

    Args:
        name: Logger name, typically __name__

    Returns:
        Configured logger instance
    """
    return logging.getLogger(name)


class PerformanceTimer:
    """Context manager timing an operation and logging its duration and RSS delta."""

    def __init__(self, operation_name: str, logger: Optional[logging.Logger] = None):
        self.operation_name = operation_name
        self.logger = logger or logging.getLogger(__name__)
        self.start_time = None
        self.start_rss = 0
        self.duration = 0.0

    def __enter__(self):
        self.start_time = time.perf_counter()
        self.start_rss = psutil.Process().memory_info().rss
        self.logger.debug(f"Starting operation: {self.operation_name}")
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.duration = time.perf_counter() - self.start_time
        rss_delta = psutil.Process().memory_info().rss - self.start_rss

        if exc_type is None:
            self.logger.info(
                f"Operation '{self.operation_name}' completed in {format_duration(self.duration)} "
                f"(rss {rss_delta / 1024:+.0f} KiB)"
            )
        else:
            self.logger.error(f"Operation '{self.operation_name}' failed after {format_duration(self.duration)}: {exc_val}")


# Global log manager instance
_log_manager: Optional[LogManager] = None


def initialize_logging(config=None) -> LogManager:
    """Initialize the global logging system."""
    global _log_manager
    _log_manager = LogManager(config)
    return _log_manager
