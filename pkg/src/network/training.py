"""
Training of the matching network.

One optimization step consumes one frame-pair sample: the detections of frame t
against the tracklets built from ground-truth identities up to frame t - 1.
Parameters are updated with Adam and decoupled weight decay.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .matching_net import FramePairSample, MatchingNetwork, loss_and_gradients
from ..config.settings import MatchingConfig, TrainConfig
from ..models.data_models import GtSequence
from ..models.errors import NonFiniteGradient, QpError
from ..utils.helpers import iou_matrix
from ..utils.logging_config import PerformanceTimer, get_logger

logger = get_logger(__name__)

LABEL_IOU_THRESHOLD = 0.5


@dataclass
class AdamState:
    """First and second moment estimates per parameter."""
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, params: Dict[str, np.ndarray]) -> "AdamState":
        return cls(0, {k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_update(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState,
                config: TrainConfig) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One Adam step with decoupled weight decay; returns new parameters and state."""
    t = state.step + 1
    b1, b2 = config.beta1, config.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params[name] = p - config.learning_rate * (m_hat / (np.sqrt(v_hat) + config.adam_eps)
                                                       + config.weight_decay * p)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(t, new_m, new_v)


def _matching_config(config: TrainConfig, matching_config: Optional[MatchingConfig]) -> MatchingConfig:
    if matching_config is not None:
        return matching_config
    return MatchingConfig(tol=config.qp_tol, temperature=config.temperature)


def train_step(sample: FramePairSample, network: MatchingNetwork, state: AdamState, config: TrainConfig,
               matching_config: Optional[MatchingConfig] = None) -> Tuple[MatchingNetwork, AdamState, float]:
    """
    Forward, backward and Adam update on one frame-pair sample.

    Returns:
        (updated network, updated optimizer state, loss before the update)

    Raises:
        NonFiniteGradient: a gradient entry is NaN or infinite
        SingularKkt: the QP layer cannot be differentiated at this optimum
    """
    loss, grads, _ = loss_and_gradients(network, sample, _matching_config(config, matching_config),
                                        config.temperature)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"gradient of {name} is not finite")
    params, state = adam_update(network.parameters(), grads, state, config)
    return network.with_parameters(params), state, loss


class Trainer:
    """Holds the network and optimizer state across training steps."""

    def __init__(self, network: MatchingNetwork, config: Optional[TrainConfig] = None,
                 matching_config: Optional[MatchingConfig] = None):
        self.network = network
        self.config = config or TrainConfig()
        self.matching_config = _matching_config(self.config, matching_config)
        self.state = AdamState.zeros(network.parameters())
        self.losses: List[float] = []
        self.skipped = 0

    def step(self, sample: FramePairSample) -> float:
        self.network, self.state, loss = train_step(sample, self.network, self.state, self.config,
                                                    self.matching_config)
        self.losses.append(loss)
        return loss

    def fit(self, samples: Sequence[FramePairSample], epochs: Optional[int] = None) -> List[float]:
        """
        Run every sample once per epoch in order; returns the per-step losses.

        Samples whose QP cannot be solved or differentiated are skipped and counted.
        """
        epochs = self.config.epochs if epochs is None else epochs
        start = len(self.losses)
        with PerformanceTimer(f"training {len(samples)} samples x {epochs} epochs", logger):
            for epoch in range(epochs):
                epoch_losses = []
                for sample in samples:
                    try:
                        epoch_losses.append(self.step(sample))
                    except QpError as e:
                        self.skipped += 1
                        logger.warning(f"Skipping frame {sample.frame}: {e.kind}: {e.message}")
                if epoch_losses:
                    logger.info(f"Epoch {epoch + 1}/{epochs}: mean loss {np.mean(epoch_losses):.6f}")
        return self.losses[start:]


def label_detections(det_boxes: np.ndarray, gt_boxes: np.ndarray, gt_ids: Sequence[int],
                     threshold: float = LABEL_IOU_THRESHOLD) -> List[int]:
    """Ground-truth identity of each detection by IoU assignment; -1 when unmatched."""
    labels = [-1] * len(det_boxes)
    if len(det_boxes) == 0 or len(gt_boxes) == 0:
        return labels
    overlap = iou_matrix(det_boxes, gt_boxes)
    rows, cols = linear_sum_assignment(-overlap)
    for r, c in zip(rows, cols):
        if overlap[r, c] >= threshold:
            labels[r] = int(gt_ids[c])
    return labels


def build_training_samples(frames: Dict[int, Tuple[np.ndarray, np.ndarray]], gt: GtSequence,
                           max_history: int = 30) -> List[FramePairSample]:
    """
    Cut frame-pair samples from a labeled sequence.

    Args:
        frames: frame -> (center-form detection boxes, raw appearance features)
        gt: Ground truth used to label detections
        max_history: Most recent appearances kept per identity

    Returns:
        One sample per frame that has both detections and earlier identities
    """
    histories: Dict[int, List[np.ndarray]] = {}
    last_box: Dict[int, np.ndarray] = {}
    samples = []
    for frame in sorted(frames):
        boxes, features = frames[frame]
        truth = gt.boxes_at(frame)
        labels = label_detections(boxes, np.array([b.box for b in truth]).reshape(-1, 4),
                                  [b.identity for b in truth])

        ids = sorted(histories)
        if len(boxes) and ids:
            y = np.array([[1.0 if label == tid else 0.0 for tid in ids] for label in labels])
            samples.append(FramePairSample(
                det_features=np.asarray(features, dtype=float),
                det_boxes=np.asarray(boxes, dtype=float),
                track_histories=tuple(np.vstack(histories[tid]) for tid in ids),
                track_boxes=np.vstack([last_box[tid] for tid in ids]),
                labels=y,
                frame=frame,
            ))

        for i, label in enumerate(labels):
            if label < 0:
                continue
            histories.setdefault(label, []).append(np.asarray(features[i], dtype=float))
            histories[label] = histories[label][-max_history:]
            last_box[label] = np.asarray(boxes[i], dtype=float)

    logger.debug(f"Built {len(samples)} training samples from {len(frames)} frames")
    return samples

