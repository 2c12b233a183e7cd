"""
Utility functions shared across the tracker.

Box conventions: "center" boxes are (x_center, y_center, width, height),
"tlwh" boxes are (x_top_left, y_top_left, width, height) as stored on disk,
"xyah" boxes are (x_center, y_center, aspect=w/h, height) for the Kalman filter.
"""

import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from ..models.errors import ZeroVector


def tlwh_to_center(box: Sequence[float]) -> np.ndarray:
    x, y, w, h = (float(v) for v in box)
    return np.array([x + w / 2.0, y + h / 2.0, w, h])


def center_to_tlwh(box: Sequence[float]) -> np.ndarray:
    xc, yc, w, h = (float(v) for v in box)
    return np.array([xc - w / 2.0, yc - h / 2.0, w, h])


def center_to_xyah(box: Sequence[float]) -> np.ndarray:
    xc, yc, w, h = (float(v) for v in box)
    return np.array([xc, yc, w / h, h])


def xyah_to_center(xyah: Sequence[float]) -> np.ndarray:
    xc, yc, a, h = (float(v) for v in xyah)
    return np.array([xc, yc, a * h, h])


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """
    Pairwise intersection-over-union of center-form boxes.

    Args:
        boxes_a: (N, 4) array
        boxes_b: (M, 4) array

    Returns:
        (N, M) array of IoU values in [0, 1]
    """
    a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))

    a_min = a[:, None, :2] - a[:, None, 2:] / 2.0
    a_max = a[:, None, :2] + a[:, None, 2:] / 2.0
    b_min = b[None, :, :2] - b[None, :, 2:] / 2.0
    b_max = b[None, :, :2] + b[None, :, 2:] / 2.0

    extent = np.clip(np.minimum(a_max, b_max) - np.maximum(a_min, b_min), 0.0, None)
    inter = extent[..., 0] * extent[..., 1]
    union = (a[:, None, 2] * a[:, None, 3]) + (b[None, :, 2] * b[None, :, 3]) - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def iou(box_a: Sequence[float], box_b: Sequence[float]) -> float:
    return float(iou_matrix(np.asarray(box_a)[None], np.asarray(box_b)[None])[0, 0])


def l2_normalize(vector: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Return vector / ||vector||; raises ZeroVector for an all-zero input."""
    v = np.asarray(vector, dtype=float)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm < eps:
        raise ZeroVector(f"cannot normalize vector with norm {norm:.3g}")
    return v / norm


def l2_normalize_rows(matrix: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if m.size == 0:
        return m.copy()
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms < eps):
        raise ZeroVector("cannot normalize a zero row")
    return m / norms


def max_relative_error(analytic: np.ndarray, reference: np.ndarray, floor: float = 1e-4) -> float:
    """
    Largest |a - r| / max(|a|, |r|, floor) over all entries.

    The floor keeps exactly-zero entries from producing meaningless ratios.
    """
    a = np.asarray(analytic, dtype=float).ravel()
    r = np.asarray(reference, dtype=float).ravel()
    if a.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(a), np.abs(r)), floor)
    return float(np.max(np.abs(a - r) / scale))


def format_duration(seconds: float) -> str:
    """
    Format duration in seconds to human-readable string.

    Args:
        seconds: Duration in seconds

    Returns:
        Formatted string (e.g., "2m 30s")
    """
    if seconds < 1:
        return f"{seconds*1000:.0f}ms"
    elif seconds < 60:
        return f"{seconds:.1f}s"
    minutes = int(seconds // 60)
    return f"{minutes}m {int(seconds % 60)}s"


def ensure_directory_exists(directory_path: str) -> bool:
    """
    Ensure directory exists, create if necessary.

    Args:
        directory_path: Path to directory

    Returns:
        True if directory exists or was created successfully
    """
    try:
        Path(directory_path).mkdir(parents=True, exist_ok=True)
        return True
    except OSError as e:
        logging.error(f"Failed to create directory {directory_path}: {e}")
        return False
