"""Shared pytest fixtures."""

import logging

import numpy as np
import pytest

from src.models.data_models import GtSequence, LabeledBox


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def make_sequence():
    """Build a GtSequence from {frame: [(identity, center box), ...]}."""
    def build(frames, first_frame=1, last_frame=0, camera_motion="static"):
        return GtSequence({f: [LabeledBox(i, tuple(float(v) for v in box)) for i, box in boxes]
                           for f, boxes in frames.items()},
                          first_frame=first_frame, last_frame=last_frame, camera_motion=camera_motion)
    return build


@pytest.fixture
def unit_features():
    """(n, d) rows of the identity basis: mutually orthogonal unit appearances."""
    def build(n, d=8):
        return np.eye(d)[:n].copy()
    return build


@pytest.fixture(autouse=True)
def quiet_logging():
    logging.getLogger().setLevel(logging.WARNING)
    yield
