"""
Online tracking controller.

GMTracker runs the per-frame association loop: predict every active track,
match the detection graph against the tracklet graph, drop matches that fail
the IoU, motion and appearance gates, recover leftovers with IoU Hungarian,
update matched tracks, start new tracks and retire old ones.
"""

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .motion import KalmanFilter, apply_warp
from ..config.settings import CAMERA_MOVING, MatchingConfig, TrackerConfig
from ..models.data_models import (
    Box, DetectionRecord, FrameGraph, GraphKind, KalmanState, MatchResult, Track, TrackObservation,
    TrackStatus,
)
from ..models.errors import GMTrackerError, SingularInnovation
from ..network.matching_net import MatchingNetwork, aggregate_tracklet_feature, encode_appearance, gcn_update
from ..solvers.graph_matching import build_vertex_affinity, match_graphs
from ..solvers.scoring import sharpen_scores
from ..utils.helpers import center_to_tlwh, iou_matrix, l2_normalize_rows
from ..utils.logging_config import PerformanceTimer, get_logger

logger = get_logger(__name__)


def hungarian(costs: np.ndarray) -> List[Tuple[int, int]]:
    """Minimum-cost one-to-one assignment; rectangular matrices leave the surplus unassigned."""
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        return []
    if not np.all(np.isfinite(costs)):
        raise ValueError("assignment costs must be finite")
    rows, cols = linear_sum_assignment(costs)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


class Matcher(Protocol):
    name: str

    def match(self, detections: FrameGraph, tracklets: FrameGraph) -> MatchResult:
        ...


class HungarianMatcher:
    """Hungarian assignment on the vertex affinity alone."""

    name = "hungarian"

    def __init__(self, matching_config: Optional[MatchingConfig] = None):
        self.matching_config = matching_config or MatchingConfig()

    def match(self, detections: FrameGraph, tracklets: FrameGraph) -> MatchResult:
        if detections.size == 0 or tracklets.size == 0:
            return MatchResult.empty(detections.size, tracklets.size)
        B = build_vertex_affinity(detections, tracklets)
        return MatchResult(X=B, assignment=hungarian(-B),
                           sharpened=sharpen_scores(B, self.matching_config.temperature))


class GraphMatcher:
    """
    Relaxed graph matching between the two frame graphs.

    With a network, vertex features first pass through the cross-graph GCN.
    """

    name = "graph"

    def __init__(self, network: Optional[MatchingNetwork] = None,
                 matching_config: Optional[MatchingConfig] = None, use_geometry: bool = True):
        self.network = network
        self.matching_config = matching_config or MatchingConfig()
        self.use_geometry = use_geometry

    def match(self, detections: FrameGraph, tracklets: FrameGraph) -> MatchResult:
        if detections.size == 0 or tracklets.size == 0:
            return MatchResult.empty(detections.size, tracklets.size)
        if self.network is not None and self.network.gcn_config.num_layers > 0:
            cfg = replace(self.network.gcn_config, use_geometry=self.use_geometry)
            HD, HT = gcn_update(detections.features, tracklets.features, detections.boxes, tracklets.boxes,
                                self.network.gcn, cfg)
            detections = detections.with_features(HD).finalize()
            tracklets = tracklets.with_features(HT).finalize()
        return match_graphs(detections, tracklets, self.matching_config)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def birth_filter(box: Box, appearance: np.ndarray, tracks: Sequence[Track], config: TrackerConfig,
                 kalman: Optional[KalmanFilter] = None) -> bool:
    """
    Whether an unassociated detection starts a new track.

    True when it is dissimilar in appearance to every track, or outside every
    motion gate, or overlaps no track at all. With no tracks it is always new.
    """
    if not tracks:
        return True
    kalman = kalman or KalmanFilter(config)
    sigma = config.appearance_threshold
    if all(cosine(appearance, t.mean_appearance) < sigma for t in tracks):
        return True
    if not any(_gate_passes(kalman, t, box, config.kappa) for t in tracks):
        return True
    overlap = iou_matrix(np.asarray(box, dtype=float)[None], np.array([t.kalman.box for t in tracks]))
    return bool(np.all(overlap <= 0.0))


def _gate_passes(kalman: KalmanFilter, track: Track, box: Box, kappa: float) -> bool:
    try:
        return kalman.gate(track.kalman, box, kappa)[0]
    except SingularInnovation:
        logger.warning(f"Track {track.id}: singular innovation covariance, gate fails")
        return False


def _keep_size_positive(predicted: KalmanState, previous: KalmanState) -> KalmanState:
    """Freeze aspect and height when their velocities would drive them to zero."""
    if predicted.mean[2] > 0 and predicted.mean[3] > 0:
        return predicted
    mean = predicted.mean.copy()
    mean[2:4] = previous.mean[2:4]
    mean[6:8] = 0.0
    return KalmanState(mean, predicted.covariance)


def interpolate_tracks(tracks: Sequence[Track]) -> List[Track]:
    """
    Fill every intra-track frame gap with linearly interpolated boxes.

    Interpolated observations are marked synthetic and carry no appearance.
    """
    result = []
    for track in tracks:
        history = [track.history[0]] if track.history else []
        for prev, cur in zip(track.history, track.history[1:]):
            gap = cur.frame - prev.frame
            a, b = np.asarray(prev.box, dtype=float), np.asarray(cur.box, dtype=float)
            for k in range(1, gap):
                box = a + (b - a) * (k / gap)
                history.append(TrackObservation(prev.frame + k, tuple(float(v) for v in box), None, True))
            history.append(cur)
        result.append(replace(track, history=history))
    return result


@dataclass
class FrameSummary:
    """What one step did."""
    frame: int
    assignments: Dict[int, int]
    matched: int = 0
    filtered: int = 0
    fallback: int = 0
    births: int = 0
    deaths: int = 0
    matcher_failed: bool = False


class GMTracker:
    """
    Per-sequence tracking state and the online association loop.

    Tracks are never deleted: retired tracks stay in `tracks` with status DEAD
    so their trajectories remain available for output and evaluation.
    """

    def __init__(self, config: Optional[TrackerConfig] = None, network: Optional[MatchingNetwork] = None,
                 matching_config: Optional[MatchingConfig] = None, matcher: Optional[Matcher] = None):
        self.config = config or TrackerConfig()
        self.config.validate()
        self.network = network
        self.matching_config = matching_config or MatchingConfig()
        self.kalman = KalmanFilter(self.config)
        self.fallback_matcher = HungarianMatcher(self.matching_config)
        if matcher is not None:
            self.matcher = matcher
        elif self.config.matcher == "hungarian":
            self.matcher = self.fallback_matcher
        else:
            self.matcher = GraphMatcher(network, self.matching_config, self.config.use_geometry)
        self.tracks: List[Track] = []
        self.next_id = 1
        self.history: List[FrameSummary] = []
        self.logger = get_logger(__name__)

    @property
    def active_tracks(self) -> List[Track]:
        return [t for t in self.tracks if t.is_active]

    def encode(self, features: np.ndarray) -> np.ndarray:
        """Unit appearance vectors for raw detection features."""
        features = np.asarray(features, dtype=float)
        if features.shape[0] == 0:
            return features.reshape(0, features.shape[1] if features.ndim == 2 else 0)
        if self.network is not None:
            return encode_appearance(features, self.network.encoder)
        return l2_normalize_rows(features)

    # Per-frame loop ------------------------------------------------------------

    def step(self, frame: int, boxes: np.ndarray, features: np.ndarray,
             warp: Optional[np.ndarray] = None) -> FrameSummary:
        """
        Associate one frame of detections.

        Args:
            frame: Frame index, strictly greater than the previous call's
            boxes: (n, 4) center-form detection boxes
            features: (n, d) raw appearance features
            warp: Optional 2x3 camera warp from the previous frame to this one

        Returns:
            FrameSummary whose assignments map detection index to track id
        """
        boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
        appearance = self.encode(features)
        if self.history and frame <= self.history[-1].frame:
            raise ValueError(f"frame {frame} does not follow frame {self.history[-1].frame}")

        active = self.active_tracks
        for track in active:
            state = track.kalman
            if warp is not None and self.config.camera_motion == CAMERA_MOVING:
                state = apply_warp(state, warp)
            track.kalman = _keep_size_positive(self.kalman.predict(state), track.kalman)

        summary = FrameSummary(frame, {})
        gD = FrameGraph.from_arrays(appearance, boxes, GraphKind.DETECTION, frame)
        track_features = (np.array([t.mean_appearance for t in active]) if active
                          else np.zeros((0, appearance.shape[1] if appearance.ndim == 2 else 0)))
        gT = FrameGraph.from_arrays(
            track_features,
            np.array([t.kalman.box for t in active]), GraphKind.TRACKLET, frame, [t.id for t in active])

        pairs = self._match(gD, gT, summary)
        kept = [(i, j) for i, j in pairs if self._passes_gates(boxes[i], appearance[i], active[j])]
        summary.filtered = len(pairs) - len(kept)
        summary.matched = len(kept)

        fallback = self._iou_fallback(boxes, active, kept)
        summary.fallback = len(fallback)

        for i, j in kept + fallback:
            self._absorb(active[j], frame, boxes[i], appearance[i])
            summary.assignments[i] = active[j].id

        for i in range(len(boxes)):
            if i in summary.assignments:
                continue
            if birth_filter(tuple(boxes[i]), appearance[i], active, self.config, self.kalman):
                track = self._start_track(frame, boxes[i], appearance[i])
                summary.assignments[i] = track.id
                summary.births += 1

        for track in active:
            if track.age(frame) > self.config.delta:
                track.status = TrackStatus.DEAD
                summary.deaths += 1

        self.history.append(summary)
        self.logger.debug(f"Frame {frame}: {len(boxes)} detections, {summary.matched} matched, "
                          f"{summary.filtered} filtered, {summary.fallback} fallback, "
                          f"{summary.births} births, {summary.deaths} deaths")
        return summary

    def _match(self, gD: FrameGraph, gT: FrameGraph, summary: FrameSummary) -> List[Tuple[int, int]]:
        if gD.size == 0 or gT.size == 0:
            return []
        try:
            return self.matcher.match(gD, gT).assignment
        except GMTrackerError as e:
            self.logger.warning(f"Frame {summary.frame}: {self.matcher.name} matcher failed "
                                f"({e.kind}: {e.message}), using Hungarian on vertex affinity")
            summary.matcher_failed = True
            return self.fallback_matcher.match(gD, gT).assignment

    def _passes_gates(self, box: np.ndarray, appearance: np.ndarray, track: Track) -> bool:
        if iou_matrix(box[None], np.array([track.kalman.box]))[0, 0] <= 0.0:
            return False
        if not _gate_passes(self.kalman, track, tuple(box), self.config.kappa):
            return False
        return cosine(appearance, track.mean_appearance) >= self.config.appearance_threshold

    def _iou_fallback(self, boxes: np.ndarray, active: List[Track],
                      kept: List[Tuple[int, int]]) -> List[Tuple[int, int]]:
        taken_d = {i for i, _ in kept}
        taken_t = {j for _, j in kept}
        free_d = [i for i in range(len(boxes)) if i not in taken_d]
        free_t = [j for j in range(len(active)) if j not in taken_t]
        if not free_d or not free_t:
            return []
        overlap = iou_matrix(boxes[free_d], np.array([active[j].kalman.box for j in free_t]))
        return [(free_d[r], free_t[c]) for r, c in hungarian(-overlap)
                if overlap[r, c] >= self.config.iou_fallback_min]

    # Track bookkeeping ----------------------------------------------------------

    def _start_track(self, frame: int, box: np.ndarray, appearance: np.ndarray) -> Track:
        box = tuple(float(v) for v in box)
        track = Track(
            id=self.next_id,
            history=[TrackObservation(frame, box, appearance)],
            mean_appearance=appearance.copy(),
            kalman=self.kalman.initiate(box),
            last_update=frame,
        )
        self.next_id += 1
        self.tracks.append(track)
        return track

    def _absorb(self, track: Track, frame: int, box: np.ndarray, appearance: np.ndarray) -> None:
        box = tuple(float(v) for v in box)
        track.history.append(TrackObservation(frame, box, appearance))
        track.kalman = self.kalman.update(track.kalman, box)
        track.last_update = frame

        appearances = [o.appearance for o in track.history if o.appearance is not None]
        track.mean_appearance = aggregate_tracklet_feature(appearances, self.config.aggregation,
                                                           self.config.moving_average_alpha)

    # Output ---------------------------------------------------------------------

    def finalized_tracks(self) -> List[Track]:
        """Every track seen so far, gap-filled when interpolation is enabled."""
        return interpolate_tracks(self.tracks) if self.config.interpolate else list(self.tracks)

    def records(self) -> List[DetectionRecord]:
        """Track output as MOTChallenge records sorted by frame then id."""
        out = []
        for track in self.finalized_tracks():
            for obs in track.history:
                x, y, w, h = center_to_tlwh(obs.box)
                out.append(DetectionRecord(obs.frame, track.id, x, y, w, h, 1.0))
        return sorted(out, key=lambda r: (r.frame, r.id))

    def run(self, frames: Dict[int, Tuple[np.ndarray, np.ndarray]],
            warps: Optional[Dict[int, np.ndarray]] = None) -> List[DetectionRecord]:
        """Track a whole sequence given frame -> (center boxes, raw features)."""
        warps = warps or {}
        with PerformanceTimer(f"tracking {len(frames)} frames", self.logger):
            for frame in sorted(frames):
                boxes, features = frames[frame]
                self.step(frame, boxes, features, warps.get(frame))
        failures = sum(s.matcher_failed for s in self.history)
        if failures:
            self.logger.warning(f"{self.matcher.name} matcher fell back to Hungarian on {failures} frames")
        self.logger.info(f"Tracked {len(frames)} frames: {len(self.tracks)} tracks, "
                         f"{len(self.active_tracks)} still active")
        return self.records()
