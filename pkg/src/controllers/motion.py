"""
Constant-velocity Kalman filter in (x, y, aspect, height) measurement space.

The state is the box center, aspect ratio w/h and height plus their velocities.
Process and measurement noise scale with the box height through two weights
taken from TrackerConfig.
"""

from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from ..config.settings import TrackerConfig
from ..models.data_models import Box, KalmanState
from ..models.errors import NonPositiveDefinite, SingularInnovation
from ..utils.helpers import center_to_xyah
from ..utils.logging_config import get_logger

logger = get_logger(__name__)

NDIM = 4
JITTER_ATTEMPTS = 6
GATE_SLACK = 1e-12


def ensure_positive_definite(covariance: np.ndarray, what: str = "covariance") -> np.ndarray:
    """
    Symmetrize and, if Cholesky fails, add growing diagonal jitter.

    Raises:
        NonPositiveDefinite: still not positive definite after the last jitter
    """
    cov = 0.5 * (covariance + covariance.T)
    if not np.all(np.isfinite(cov)):
        raise NonPositiveDefinite(f"{what} has non-finite entries")
    scale = max(float(np.max(np.abs(np.diag(cov)))), 1.0)
    jitter = 0.0
    for attempt in range(JITTER_ATTEMPTS + 1):
        try:
            linalg.cholesky(cov + jitter * np.eye(cov.shape[0]), lower=True)
            if jitter:
                logger.debug(f"Repaired {what} with jitter {jitter:.1e}")
            return cov + jitter * np.eye(cov.shape[0])
        except linalg.LinAlgError:
            jitter = scale * 10.0 ** (attempt - 12)
    raise NonPositiveDefinite(f"{what} is not positive definite")


def gate_measurement(mean: np.ndarray, covariance: np.ndarray, measurement: Sequence[float],
                     kappa: float) -> Tuple[bool, float]:
    """
    Squared Mahalanobis distance of a measurement; passes iff the distance is <= kappa.

    Raises:
        SingularInnovation: the innovation covariance cannot be factored
    """
    try:
        factor = linalg.cholesky(covariance, lower=True)
    except linalg.LinAlgError:
        raise SingularInnovation("innovation covariance is not positive definite")
    d = np.asarray(measurement, dtype=float) - mean
    z = linalg.solve_triangular(factor, d, lower=True, check_finite=False)
    distance = float(z @ z)
    return distance <= kappa * (1.0 + GATE_SLACK), distance


class KalmanFilter:
    """Constant-velocity filter shared by every track of a sequence."""

    def __init__(self, config: Optional[TrackerConfig] = None):
        config = config or TrackerConfig()
        self.std_weight_position = config.std_weight_position
        self.std_weight_velocity = config.std_weight_velocity
        self.motion_mat = np.eye(2 * NDIM)
        for i in range(NDIM):
            self.motion_mat[i, NDIM + i] = 1.0
        self.update_mat = np.eye(NDIM, 2 * NDIM)

    def initiate(self, box: Box) -> KalmanState:
        """New state from a center-form box with zero velocity."""
        measurement = center_to_xyah(box)
        h = measurement[3]
        std = [
            2 * self.std_weight_position * h, 2 * self.std_weight_position * h, 1e-2,
            2 * self.std_weight_position * h,
            10 * self.std_weight_velocity * h, 10 * self.std_weight_velocity * h, 1e-5,
            10 * self.std_weight_velocity * h,
        ]
        mean = np.concatenate([measurement, np.zeros(NDIM)])
        return KalmanState(mean, np.diag(np.square(std)))

    def predict(self, state: KalmanState) -> KalmanState:
        h = state.mean[3]
        std = [
            self.std_weight_position * h, self.std_weight_position * h, 1e-2, self.std_weight_position * h,
            self.std_weight_velocity * h, self.std_weight_velocity * h, 1e-5, self.std_weight_velocity * h,
        ]
        mean = self.motion_mat @ state.mean
        covariance = self.motion_mat @ state.covariance @ self.motion_mat.T + np.diag(np.square(std))
        return KalmanState(mean, ensure_positive_definite(covariance))

    def project(self, state: KalmanState) -> Tuple[np.ndarray, np.ndarray]:
        """Predicted measurement mean and innovation covariance."""
        h = state.mean[3]
        std = [self.std_weight_position * h, self.std_weight_position * h, 1e-1, self.std_weight_position * h]
        mean = self.update_mat @ state.mean
        covariance = self.update_mat @ state.covariance @ self.update_mat.T + np.diag(np.square(std))
        return mean, covariance

    def update(self, state: KalmanState, box: Box) -> KalmanState:
        """Correct the state with a center-form box measurement."""
        projected_mean, projected_cov = self.project(state)
        try:
            factor = linalg.cho_factor(projected_cov, lower=True, check_finite=False)
        except linalg.LinAlgError:
            raise SingularInnovation("innovation covariance is not positive definite")
        gain = linalg.cho_solve(factor, (state.covariance @ self.update_mat.T).T, check_finite=False).T
        innovation = center_to_xyah(box) - projected_mean
        mean = state.mean + gain @ innovation
        covariance = state.covariance - gain @ projected_cov @ gain.T
        return KalmanState(mean, ensure_positive_definite(covariance))

    def gate(self, state: KalmanState, box: Box, kappa: float) -> Tuple[bool, float]:
        mean, covariance = self.project(state)
        return gate_measurement(mean, covariance, center_to_xyah(box), kappa)


def mahalanobis_gate(state: KalmanState, box: Box, kappa: float,
                     kalman: Optional[KalmanFilter] = None) -> Tuple[bool, float]:
    """Gate a center-form box against the predicted measurement distribution of state."""
    return (kalman or KalmanFilter()).gate(state, box, kappa)


def apply_warp(state: KalmanState, warp: np.ndarray) -> KalmanState:
    """
    Move a state through a 2x3 affine camera warp.

    Position is mapped by the full affine; position velocity and the matching
    covariance blocks by its linear part. Aspect and height are left as is.
    """
    warp = np.asarray(warp, dtype=float)
    if warp.shape != (2, 3):
        raise ValueError(f"camera warp must be 2x3, got {warp.shape}")
    R, t = warp[:, :2], warp[:, 2]
    transform = np.eye(2 * NDIM)
    transform[0:2, 0:2] = R
    transform[4:6, 4:6] = R
    mean = transform @ state.mean
    mean[:2] += t
    covariance = transform @ state.covariance @ transform.T
    return KalmanState(mean, ensure_positive_definite(covariance))
