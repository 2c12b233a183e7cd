"""Controllers package: the online tracking loop and its motion model."""

from .motion import KalmanFilter, apply_warp, ensure_positive_definite, gate_measurement, mahalanobis_gate
from .tracker_controller import (
    FrameSummary, GMTracker, GraphMatcher, HungarianMatcher, Matcher,
    birth_filter, cosine, hungarian, interpolate_tracks,
)

__all__ = [
    'KalmanFilter', 'apply_warp', 'ensure_positive_definite', 'gate_measurement', 'mahalanobis_gate',
    'FrameSummary', 'GMTracker', 'GraphMatcher', 'HungarianMatcher', 'Matcher',
    'birth_filter', 'cosine', 'hungarian', 'interpolate_tracks',
]
