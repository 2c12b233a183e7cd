"""
Data models for the graph-matching tracker.

This module defines the core data structures shared by the matching layer,
the tracker loop, evaluation and file I/O.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import DimensionMismatch, EmptyGraph, ZeroVector


Box = Tuple[float, float, float, float]  # x_center, y_center, width, height


class GraphKind(Enum):
    """Which side of the association a FrameGraph stands for."""
    DETECTION = "detection"
    TRACKLET = "tracklet"


class TrackStatus(Enum):
    ACTIVE = "active"
    DEAD = "dead"


@dataclass(frozen=True)
class VertexData:
    """One detection or tracklet vertex: appearance plus center-form geometry."""
    appearance: np.ndarray
    box: Box
    source_id: int
    frame: int

    def __post_init__(self):
        if self.box[2] <= 0 or self.box[3] <= 0:
            raise ValueError(f"box width and height must be positive, got {self.box}")
        if not np.all(np.isfinite(self.appearance)):
            raise ValueError("appearance must be finite")


@dataclass(frozen=True)
class FrameGraph:
    """
    Complete directed graph over the detections or tracklets of one frame.

    Edges are all ordered pairs (i, i') with i != i' in row-major order.
    """
    vertices: Tuple[VertexData, ...]
    kind: GraphKind = GraphKind.DETECTION

    @classmethod
    def from_arrays(cls, features: np.ndarray, boxes: np.ndarray, kind: GraphKind = GraphKind.DETECTION,
                    frame: int = 0, source_ids: Optional[List[int]] = None) -> "FrameGraph":
        features = np.asarray(features, dtype=float)
        boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
        if features.shape[0] != boxes.shape[0]:
            raise DimensionMismatch(f"{features.shape[0]} features for {boxes.shape[0]} boxes")
        ids = source_ids if source_ids is not None else list(range(features.shape[0]))
        vertices = tuple(
            VertexData(appearance=features[i], box=tuple(float(v) for v in boxes[i]), source_id=ids[i], frame=frame)
            for i in range(features.shape[0])
        )
        return cls(vertices=vertices, kind=kind)

    @property
    def size(self) -> int:
        return len(self.vertices)

    @property
    def features(self) -> np.ndarray:
        if not self.vertices:
            return np.zeros((0, 0))
        return np.stack([v.appearance for v in self.vertices])

    @property
    def boxes(self) -> np.ndarray:
        return np.array([v.box for v in self.vertices], dtype=float).reshape(-1, 4)

    @property
    def edges(self) -> List[Tuple[int, int]]:
        n = self.size
        return [(i, j) for i in range(n) for j in range(n) if i != j]

    @property
    def is_finalized(self) -> bool:
        if not self.vertices:
            return True
        return bool(np.allclose(np.linalg.norm(self.features, axis=1), 1.0, atol=1e-6))

    def finalize(self) -> "FrameGraph":
        """Return a copy whose vertex features are L2-normalized."""
        if not self.vertices:
            return self
        features = self.features
        norms = np.linalg.norm(features, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            raise ZeroVector(f"{self.kind.value} graph has a zero appearance vector")
        normalized = features / norms
        return replace(self, vertices=tuple(
            replace(v, appearance=normalized[i]) for i, v in enumerate(self.vertices)
        ))

    def with_features(self, features: np.ndarray) -> "FrameGraph":
        if features.shape[0] != self.size:
            raise DimensionMismatch(f"{features.shape[0]} features for {self.size} vertices")
        return replace(self, vertices=tuple(
            replace(v, appearance=np.asarray(features[i], dtype=float)) for i, v in enumerate(self.vertices)
        ))

    def require_vertices(self) -> None:
        if not self.vertices:
            raise EmptyGraph(f"{self.kind.value} graph has no vertices")


@dataclass(frozen=True)
class AffinityBundle:
    """Vertex/edge affinities, indicator matrices and the expanded quadratic affinity."""
    B: np.ndarray
    Me: np.ndarray
    S_D: np.ndarray
    T_D: np.ndarray
    S_T: np.ndarray
    T_T: np.ndarray
    M: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.B.shape


@dataclass(frozen=True)
class MatchResult:
    """Relaxed score map X, rounded assignment and sharpened scores."""
    X: np.ndarray
    assignment: List[Tuple[int, int]]
    sharpened: np.ndarray
    objective: float = 0.0
    iterations: int = 0

    @classmethod
    def empty(cls, n_d: int, n_t: int) -> "MatchResult":
        return cls(X=np.zeros((n_d, n_t)), assignment=[], sharpened=np.zeros((n_d, n_t)))


@dataclass(frozen=True)
class KalmanState:
    """Constant-velocity state (x, y, aspect, height and velocities) with covariance."""
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def box(self) -> Box:
        x, y, a, h = self.mean[:4]
        return (float(x), float(y), float(a * h), float(h))


@dataclass(frozen=True)
class TrackObservation:
    frame: int
    box: Box
    appearance: Optional[np.ndarray] = None
    synthetic: bool = False


@dataclass
class Track:
    """A tracklet: detection history sharing one identity, with motion state."""
    id: int
    history: List[TrackObservation]
    mean_appearance: np.ndarray
    kalman: KalmanState
    last_update: int
    status: TrackStatus = TrackStatus.ACTIVE

    @property
    def is_active(self) -> bool:
        return self.status == TrackStatus.ACTIVE

    @property
    def frames(self) -> List[int]:
        return [obs.frame for obs in self.history]

    def age(self, frame: int) -> int:
        """Frames elapsed since the last associated detection."""
        return frame - self.last_update


@dataclass(frozen=True)
class LabeledBox:
    """A box tagged with an identity: ground truth or hypothesis."""
    identity: int
    box: Box


@dataclass(frozen=True)
class DetectionRecord:
    """One line of a MOTChallenge-style file; x, y are the top-left corner."""
    frame: int
    id: int
    x: float
    y: float
    w: float
    h: float
    confidence: float = 1.0
    extras: Tuple[float, ...] = (-1.0, -1.0, -1.0)

    @property
    def center_box(self) -> Box:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0, self.w, self.h)


@dataclass
class GtSequence:
    """Per-frame identity boxes plus generator metadata."""
    frames: Dict[int, List[LabeledBox]]
    first_frame: int = 1
    last_frame: int = 0
    camera_motion: str = "static"
    appearance_params: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.frames and self.last_frame < self.first_frame:
            self.first_frame = min(self.frames)
            self.last_frame = max(self.frames)
        for frame, boxes in self.frames.items():
            ids = [b.identity for b in boxes]
            if len(ids) != len(set(ids)):
                raise ValueError(f"duplicate identity in frame {frame}")

    @property
    def num_boxes(self) -> int:
        return sum(len(v) for v in self.frames.values())

    def boxes_at(self, frame: int) -> List[LabeledBox]:
        return self.frames.get(frame, [])


@dataclass
class MetricReport:
    """CLEAR-MOT and ID-measure results for one sequence or an aggregate."""
    name: str = ""
    mota: float = 0.0
    motp: float = 0.0
    idf1: float = 0.0
    idp: float = 0.0
    idr: float = 0.0
    id_switches: int = 0
    fp: int = 0
    fn: int = 0
    matches: int = 0
    num_gt: int = 0
    num_hyp: int = 0
    idtp: int = 0
    idfp: int = 0
    idfn: int = 0
    mostly_tracked: int = 0
    mostly_lost: int = 0
    num_frames: int = 0
    iou_sum: float = 0.0

    def to_dict(self) -> Dict[str, object]:
        return {
            'name': self.name, 'mota': self.mota, 'motp': self.motp, 'idf1': self.idf1,
            'idp': self.idp, 'idr': self.idr, 'id_switches': self.id_switches,
            'fp': self.fp, 'fn': self.fn, 'matches': self.matches, 'num_gt': self.num_gt,
            'num_hyp': self.num_hyp, 'idtp': self.idtp, 'idfp': self.idfp, 'idfn': self.idfn,
            'mostly_tracked': self.mostly_tracked, 'mostly_lost': self.mostly_lost,
            'num_frames': self.num_frames,
        }
