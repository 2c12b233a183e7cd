"""Network package: the differentiable matching network, its training loop and checkpoints."""

from .autodiff import Node, Tape
from .matching_net import (
    MlpParams, MatchingNetwork, FramePairSample, ForwardTrace,
    build_forward, forward_loss, loss_and_gradients,
    encode_appearance, aggregate_tracklet_feature, gcn_weight, gcn_update,
)
from .training import AdamState, Trainer, adam_update, train_step, label_detections, build_training_samples
from .checkpoint import save_checkpoint, load_checkpoint, encode_checkpoint, decode_checkpoint
from .gradcheck import GradcheckReport, SuiteResult, run_all as run_gradcheck
from ..solvers.scoring import sharpen_scores, weighted_bce_loss

__all__ = [
    'Node', 'Tape',
    'MlpParams', 'MatchingNetwork', 'FramePairSample', 'ForwardTrace',
    'build_forward', 'forward_loss', 'loss_and_gradients',
    'encode_appearance', 'aggregate_tracklet_feature', 'gcn_weight', 'gcn_update',
    'AdamState', 'Trainer', 'adam_update', 'train_step', 'label_detections', 'build_training_samples',
    'save_checkpoint', 'load_checkpoint', 'encode_checkpoint', 'decode_checkpoint',
    'GradcheckReport', 'SuiteResult', 'run_gradcheck',
    'sharpen_scores', 'weighted_bce_loss',
]
