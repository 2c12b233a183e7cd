"""
Trainable matching network.

An appearance encoder (two fully connected layers) maps raw re-identification
features to unit vectors, a cross-graph GCN exchanges messages between the
detection and tracklet graphs, and the graph matching layer turns the updated
features into a relaxed score map. The whole chain is recorded on a Tape so a
frame-pair loss can be differentiated with respect to every parameter and every
input feature.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Node, Tape
from ..config.settings import GcnConfig, MatchingConfig
from ..models.errors import EmptyHistory, ShapeMismatch
from ..solvers.graph_matching import indicator_matrices
from ..utils.helpers import iou_matrix, l2_normalize, l2_normalize_rows
from ..utils.logging_config import get_logger

logger = get_logger(__name__)

ACTIVATIONS = ("relu", "identity")
PARAMETER_NAMES = ("W1", "b1", "W2", "b2")


@dataclass(frozen=True)
class MlpParams:
    """Two affine layers with a nonlinearity in between: W2 act(W1 x + b1) + b2."""
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W1.shape[1] != self.W2.shape[0]:
            raise ShapeMismatch(f"layer widths {self.W1.shape} and {self.W2.shape} do not chain")

    @classmethod
    def create(cls, d_in: int, hidden: int, d_out: int, rng: np.random.Generator,
               activation: str = "relu") -> "MlpParams":
        """Uniform fan-in initialization."""
        def layer(fan_in, fan_out):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)

        W1, b1 = layer(d_in, hidden)
        W2, b2 = layer(hidden, d_out)
        return cls(W1, b1, W2, b2, activation)

    @classmethod
    def identity(cls, d: int) -> "MlpParams":
        return cls(np.eye(d), np.zeros(d), np.eye(d), np.zeros(d), "identity")

    @property
    def d_in(self) -> int:
        return self.W1.shape[0]

    @property
    def d_out(self) -> int:
        return self.W2.shape[1]

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAMETER_NAMES}

    def apply(self, x: np.ndarray) -> np.ndarray:
        hidden = x @ self.W1 + self.b1
        if self.activation == "relu":
            hidden = np.maximum(hidden, 0.0)
        return hidden @ self.W2 + self.b2


@dataclass(frozen=True)
class MatchingNetwork:
    """Appearance encoder plus the GCN MLP shared by both graph sides."""
    encoder: MlpParams
    gcn: MlpParams
    gcn_config: GcnConfig = field(default_factory=GcnConfig)

    @classmethod
    def create(cls, d_in: int, hidden_width: int = 512, output_width: int = 512, seed: int = 0,
               activation: str = "relu", gcn_config: Optional[GcnConfig] = None) -> "MatchingNetwork":
        rng = np.random.default_rng(seed)
        encoder = MlpParams.create(d_in, hidden_width, output_width, rng, activation)
        gcn = MlpParams.create(output_width, hidden_width, output_width, rng, activation)
        return cls(encoder, gcn, gcn_config or GcnConfig())

    @classmethod
    def identity(cls, d: int, gcn_config: Optional[GcnConfig] = None) -> "MatchingNetwork":
        """Untrained network whose encoder and GCN MLP are exact identities."""
        return cls(MlpParams.identity(d), MlpParams.identity(d), gcn_config or GcnConfig())

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {f"encoder.{k}": v for k, v in self.encoder.arrays().items()}
        params.update({f"gcn.{k}": v for k, v in self.gcn.arrays().items()})
        return params

    def with_parameters(self, params: Dict[str, np.ndarray]) -> "MatchingNetwork":
        def rebuild(prefix: str, mlp: MlpParams) -> MlpParams:
            updates = {}
            for name in PARAMETER_NAMES:
                value = np.asarray(params[f"{prefix}.{name}"], dtype=float)
                if value.shape != getattr(mlp, name).shape:
                    raise ShapeMismatch(f"{prefix}.{name} has shape {value.shape}, "
                                        f"expected {getattr(mlp, name).shape}")
                updates[name] = value
            return replace(mlp, **updates)

        return replace(self, encoder=rebuild("encoder", self.encoder), gcn=rebuild("gcn", self.gcn))


@dataclass(frozen=True)
class FramePairSample:
    """Detections of one frame against the tracklets alive in the previous frame."""
    det_features: np.ndarray
    det_boxes: np.ndarray
    track_histories: Tuple[np.ndarray, ...]
    track_boxes: np.ndarray
    labels: np.ndarray
    frame: int = 0

    def __post_init__(self):
        n_d, n_t = self.det_features.shape[0], len(self.track_histories)
        if self.labels.shape != (n_d, n_t):
            raise ShapeMismatch(f"labels {self.labels.shape} do not match {n_d} detections x {n_t} tracklets")
        if any(h.shape[0] == 0 for h in self.track_histories):
            raise EmptyHistory("every tracklet needs at least one appearance")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.labels.shape


# Tape builders -----------------------------------------------------------------

def _mlp_on_tape(tape: Tape, x: Node, nodes: Dict[str, Node], prefix: str, activation: str) -> Node:
    hidden = tape.affine(x, nodes[f"{prefix}.W1"], nodes[f"{prefix}.b1"])
    if activation == "relu":
        hidden = tape.relu(hidden)
    return tape.affine(hidden, nodes[f"{prefix}.W2"], nodes[f"{prefix}.b2"])


def _averaging_matrix(lengths: Sequence[int]) -> np.ndarray:
    total = int(sum(lengths))
    matrix = np.zeros((len(lengths), total))
    start = 0
    for j, k in enumerate(lengths):
        matrix[j, start:start + k] = 1.0 / k
        start += k
    return matrix


def _gcn_on_tape(tape: Tape, HD: Node, HT: Node, geometry: Optional[np.ndarray],
                 nodes: Dict[str, Node], network: MatchingNetwork) -> Tuple[Node, Node]:
    cfg = network.gcn_config
    for _ in range(cfg.num_layers):
        W = tape.matmul_nt(HD, HT)
        if geometry is not None:
            W = tape.add_const(W, geometry)
        m_D = tape.matmul(W, HT)
        m_T = tape.matmul(tape.transpose(W), HD)
        HD, HT = (
            _mlp_on_tape(tape, tape.message_normalize(HD, m_D), nodes, "gcn", network.gcn.activation),
            _mlp_on_tape(tape, tape.message_normalize(HT, m_T), nodes, "gcn", network.gcn.activation),
        )
    if cfg.num_layers > 0:
        HD, HT = tape.l2_normalize(HD), tape.l2_normalize(HT)
    return HD, HT


def _edge_affinity_on_tape(tape: Tape, HD: Node, HT: Node) -> Node:
    n_d, n_t = HD.shape[0], HT.shape[0]
    S_D, T_D = indicator_matrices(n_d)
    S_T, T_T = indicator_matrices(n_t)
    start_d, end_d = np.argmax(S_D, axis=0), np.argmax(T_D, axis=0)
    start_t, end_t = np.argmax(S_T, axis=0), np.argmax(T_T, axis=0)

    ED = tape.l2_normalize(tape.concat([tape.gather_rows(HD, start_d), tape.gather_rows(HD, end_d)]))
    ET = tape.l2_normalize(tape.concat([tape.gather_rows(HT, start_t), tape.gather_rows(HT, end_t)]))
    Me = tape.matmul_nt(ED, ET)
    rows = start_d[:, None] * n_t + start_t[None, :]
    cols = end_d[:, None] * n_t + end_t[None, :]
    return tape.scatter(Me, rows, cols, (n_d * n_t, n_d * n_t))


@dataclass
class ForwardTrace:
    """Nodes of one recorded forward pass."""
    tape: Tape
    params: Dict[str, Node]
    det_input: Node
    history_input: Node
    B: Node
    M: Node
    X: Node
    y_hat: Node
    loss: Node


def build_forward(network: MatchingNetwork, sample: FramePairSample,
                  matching_config: Optional[MatchingConfig] = None, temperature: float = 1e-3,
                  detach: bool = False) -> ForwardTrace:
    """
    Record encode, GCN, affinities, QP layer, sharpening and loss for one sample.

    Args:
        network: Parameters to differentiate
        sample: Frame-pair with ground-truth labels
        matching_config: QP solver settings
        temperature: Softmax temperature applied to each row of X
        detach: Treat the QP output as a constant in the backward pass
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    tape = Tape()
    params = {name: tape.variable(value, name) for name, value in network.parameters().items()}
    act = network.encoder.activation

    det_input = tape.variable(sample.det_features, "det_features")
    HD = tape.l2_normalize(_mlp_on_tape(tape, det_input, params, "encoder", act))

    lengths = [h.shape[0] for h in sample.track_histories]
    history_input = tape.variable(np.vstack(sample.track_histories), "track_histories")
    encoded = tape.l2_normalize(_mlp_on_tape(tape, history_input, params, "encoder", act))
    HT = tape.l2_normalize(tape.matmul(tape.constant(_averaging_matrix(lengths)), encoded))

    geometry = None
    if network.gcn_config.use_geometry:
        geometry = iou_matrix(sample.det_boxes, sample.track_boxes)
    HD, HT = _gcn_on_tape(tape, HD, HT, geometry, params, network)

    B = tape.matmul_nt(HD, HT)
    M = _edge_affinity_on_tape(tape, HD, HT)
    X = tape.qp_matching(M, B, matching_config, detach=detach)
    y_hat = tape.softmax_rows(X, temperature)
    loss = tape.weighted_bce(y_hat, sample.labels)
    return ForwardTrace(tape, params, det_input, history_input, B, M, X, y_hat, loss)


def forward_loss(network: MatchingNetwork, sample: FramePairSample,
                 matching_config: Optional[MatchingConfig] = None, temperature: float = 1e-3) -> float:
    return float(build_forward(network, sample, matching_config, temperature).loss.value)


def loss_and_gradients(network: MatchingNetwork, sample: FramePairSample,
                       matching_config: Optional[MatchingConfig] = None, temperature: float = 1e-3,
                       detach: bool = False) -> Tuple[float, Dict[str, np.ndarray], ForwardTrace]:
    """Loss value, gradients keyed by parameter name, and the trace holding input gradients."""
    trace = build_forward(network, sample, matching_config, temperature, detach)
    trace.tape.backward(trace.loss)
    grads = {
        name: node.grad if node.grad is not None else np.zeros_like(node.value)
        for name, node in trace.params.items()
    }
    return float(trace.loss.value), grads, trace


# Numeric entry points -----------------------------------------------------------

def encode_appearance(raw: np.ndarray, params: MlpParams) -> np.ndarray:
    """L2-normalized encoder output; accepts one vector or a matrix of row vectors."""
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw appearance must be finite")
    if raw.ndim == 1:
        return l2_normalize(params.apply(raw[None, :])[0])
    return l2_normalize_rows(params.apply(raw))


def aggregate_tracklet_feature(history: Sequence[np.ndarray], mode: str = "mean",
                               alpha: float = 0.8) -> np.ndarray:
    """
    Intra-tracklet appearance aggregation.

    Args:
        history: Unit appearance vectors, oldest first
        mode: "mean", "moving_average" (s <- alpha s + (1 - alpha) a, renormalized
            after each step) or "last"
        alpha: Moving-average retention factor

    Returns:
        Unit vector
    """
    if len(history) == 0:
        raise EmptyHistory("cannot aggregate an empty tracklet history")
    if mode == "mean":
        return l2_normalize(np.mean(np.asarray(history, dtype=float), axis=0))
    if mode == "moving_average":
        state = l2_normalize(history[0])
        for appearance in history[1:]:
            state = l2_normalize(alpha * state + (1.0 - alpha) * np.asarray(appearance, dtype=float))
        return state
    if mode == "last":
        return l2_normalize(history[-1])
    raise ValueError(f"unknown aggregation mode {mode!r}")


def gcn_weight(hi: np.ndarray, hj: np.ndarray, gi, gj, cfg: Optional[GcnConfig] = None) -> float:
    """Aggregation weight: cosine similarity, plus box IoU when geometry is enabled."""
    cfg = cfg or GcnConfig()
    weight = float(np.dot(hi, hj) / (np.linalg.norm(hi) * np.linalg.norm(hj)))
    if cfg.use_geometry:
        weight += float(iou_matrix(np.asarray(gi)[None], np.asarray(gj)[None])[0, 0])
    return weight


def gcn_update(HD: np.ndarray, HT: np.ndarray, boxes_D: np.ndarray, boxes_T: np.ndarray,
               params: MlpParams, cfg: Optional[GcnConfig] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Cross-graph message passing on both sides; returns updated (detection, tracklet) features."""
    cfg = cfg or GcnConfig()
    HD = np.asarray(HD, dtype=float)
    HT = np.asarray(HT, dtype=float)
    if HD.shape[0] == 0 or HT.shape[0] == 0 or cfg.num_layers == 0:
        return HD.copy(), HT.copy()

    network = MatchingNetwork(encoder=params, gcn=params, gcn_config=cfg)
    tape = Tape()
    nodes = {f"gcn.{k}": tape.constant(v) for k, v in params.arrays().items()}
    geometry = iou_matrix(boxes_D, boxes_T) if cfg.use_geometry else None
    out_D, out_T = _gcn_on_tape(tape, tape.constant(HD), tape.constant(HT), geometry, nodes, network)
    return out_D.value, out_T.value
