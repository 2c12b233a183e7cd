"""Models package: shared data structures and the error hierarchy."""

from .errors import *  # noqa: F401,F403
from .data_models import (
    Box, GraphKind, TrackStatus, VertexData, FrameGraph, AffinityBundle, MatchResult,
    KalmanState, TrackObservation, Track, LabeledBox, DetectionRecord, GtSequence, MetricReport,
)

__all__ = [
    'Box', 'GraphKind', 'TrackStatus', 'VertexData', 'FrameGraph', 'AffinityBundle',
    'MatchResult', 'KalmanState', 'TrackObservation', 'Track', 'LabeledBox',
    'DetectionRecord', 'GtSequence', 'MetricReport',
]
