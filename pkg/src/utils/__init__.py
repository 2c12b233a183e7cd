"""Utilities package for the graph-matching tracker."""

from .helpers import (
    tlwh_to_center, center_to_tlwh, center_to_xyah, xyah_to_center,
    iou, iou_matrix, l2_normalize, l2_normalize_rows, max_relative_error,
    format_duration, ensure_directory_exists,
)
from .logging_config import initialize_logging, get_logger, PerformanceTimer

__all__ = [
    'tlwh_to_center', 'center_to_tlwh', 'center_to_xyah', 'xyah_to_center',
    'iou', 'iou_matrix', 'l2_normalize', 'l2_normalize_rows', 'max_relative_error',
    'format_duration', 'ensure_directory_exists',
    'initialize_logging', 'get_logger', 'PerformanceTimer',
]
