#!/usr/bin/env python3
"""
Tests for the matching network: encoder, aggregation, cross-graph GCN, score
sharpening, the loss, reverse-mode gradients, training and checkpoints.
"""

import numpy as np
import pytest

from src.config.settings import GcnConfig, MatchingConfig, TrainConfig
from src.models.data_models import GtSequence, LabeledBox
from src.models.errors import DataIoError, EmptyHistory, ShapeMismatch, ZeroVector
from src.network import (
    FramePairSample, MatchingNetwork, MlpParams, Tape, Trainer,
    aggregate_tracklet_feature, build_training_samples, encode_appearance, gcn_update, gcn_weight,
    load_checkpoint, loss_and_gradients, save_checkpoint, sharpen_scores, train_step, weighted_bce_loss,
)
from src.network.checkpoint import MAGIC, decode_checkpoint, encode_checkpoint
from src.network.gradcheck import (
    END_TO_END_INSTANCES, END_TO_END_SHAPE, GRADCHECK_TEMPERATURE, NETWORK_STEP, QP_INSTANCES,
    central_difference, check_network_instance, random_sample, run_end_to_end_suite, run_qp_suite,
)
from src.network.training import AdamState
from src.utils.helpers import max_relative_error


def tape_gradient_error(build, x, seed=0):
    """Compare a tape primitive's backward pass against central differences of sum(w * out)."""
    rng = np.random.default_rng(seed)
    tape = Tape()
    node = tape.variable(x)
    out = build(tape, node)
    w = rng.normal(size=out.shape)
    tape.backward(out, seed=w)

    def f(v):
        fresh = Tape()
        return float(np.sum(w * build(fresh, fresh.variable(v)).value))

    return max_relative_error(node.grad, central_difference(f, x, 1e-6), 1e-6)


def separable_sample():
    det = np.array([[1.0, 0.3, 0.0], [1.0, 0.0, 0.3]])
    histories = (np.array([[1.0, 0.3, 0.0]]), np.array([[1.0, 0.0, 0.3]]))
    boxes = np.array([[10.0, 10.0, 5.0, 5.0], [40.0, 10.0, 5.0, 5.0]])
    return FramePairSample(det, boxes, histories, boxes.copy(), np.eye(2))


# Encoder and aggregation ---------------------------------------------------

def test_encode_identity_keeps_unit_vector():
    raw = np.array([0.6, 0.8])
    np.testing.assert_allclose(encode_appearance(raw, MlpParams.identity(2)), raw)


def test_encode_normalizes_output():
    np.testing.assert_allclose(encode_appearance([3.0, 4.0], MlpParams.identity(2)), [0.6, 0.8])


def test_encode_zero_input_raises():
    with pytest.raises(ZeroVector):
        encode_appearance(np.zeros(2), MlpParams.identity(2))


def test_encode_rows_are_unit():
    params = MlpParams.create(6, 8, 4, np.random.default_rng(0))
    out = encode_appearance(np.random.default_rng(1).normal(size=(5, 6)), params)
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-6)


def test_aggregate_single_element():
    a = np.array([0.0, 1.0])
    np.testing.assert_allclose(aggregate_tracklet_feature([a]), a)


def test_aggregate_mean_is_bisector():
    out = aggregate_tracklet_feature([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    np.testing.assert_allclose(out, [np.sqrt(0.5), np.sqrt(0.5)])


def test_aggregate_moving_average():
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    expected = np.array([0.8, 0.2]) / np.linalg.norm([0.8, 0.2])
    np.testing.assert_allclose(aggregate_tracklet_feature([a, b], "moving_average", 0.8), expected)


def test_aggregate_last_and_empty():
    a, b = np.array([1.0, 0.0]), np.array([0.0, 2.0])
    np.testing.assert_allclose(aggregate_tracklet_feature([a, b], "last"), [0.0, 1.0])
    with pytest.raises(EmptyHistory):
        aggregate_tracklet_feature([])


# GCN -------------------------------------------------------------------------

def test_gcn_weight_examples():
    h = np.array([1.0, 0.0])
    box = (5.0, 5.0, 2.0, 2.0)
    assert gcn_weight(h, h, box, box) == pytest.approx(2.0)
    assert gcn_weight(h, h, box, (50.0, 50.0, 2.0, 2.0)) == pytest.approx(1.0)
    w = gcn_weight(h, np.array([0.0, 1.0]), (0.0, 0.0, 2.0, 2.0), (1.0, 0.0, 2.0, 2.0))
    assert w == pytest.approx(1.0 / 3.0)


def test_gcn_weight_without_geometry_ignores_boxes():
    h = np.array([1.0, 0.0])
    cfg = GcnConfig(use_geometry=False)
    assert gcn_weight(h, h, (5.0, 5.0, 2.0, 2.0), (5.0, 5.0, 2.0, 2.0), cfg) == pytest.approx(1.0)


def test_gcn_update_self_message_is_fixed_point():
    h = np.array([[0.6, 0.8]])
    boxes = np.array([[0.0, 0.0, 1.0, 1.0]])
    HD, HT = gcn_update(h, h, boxes, boxes, MlpParams.identity(2), GcnConfig(use_geometry=False))
    np.testing.assert_allclose(HD, h)
    np.testing.assert_allclose(HT, h)


def test_gcn_update_zero_layers_is_noop():
    rng = np.random.default_rng(0)
    HD, HT = rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
    boxes = rng.uniform(5, 10, size=(3, 4))
    out_D, out_T = gcn_update(HD, HT, boxes, boxes[:2], MlpParams.identity(4), GcnConfig(num_layers=0))
    np.testing.assert_array_equal(out_D, HD)
    np.testing.assert_array_equal(out_T, HT)


def test_message_normalization_example():
    tape = Tape()
    out = tape.message_normalize(tape.constant([[1.0, 0.0]]), tape.constant([[0.0, 2.0]]))
    np.testing.assert_allclose(out.value, [[1.0, 1.0]])


def test_zero_message_passes_feature_through():
    tape = Tape()
    out = tape.message_normalize(tape.constant([[0.3, 0.4]]), tape.constant([[0.0, 0.0]]))
    np.testing.assert_allclose(out.value, [[0.3, 0.4]])


# Scores and loss ------------------------------------------------------------------

def test_sharpen_saturates_at_low_temperature():
    y = sharpen_scores(np.array([[0.6, 0.4]]), 1e-3)
    assert y[0, 0] == pytest.approx(1.0)
    assert y[0, 1] <= 1e-30


def test_sharpen_uniform_rows_and_flat_limit():
    np.testing.assert_allclose(sharpen_scores(np.full((2, 3), 0.2), 1e-3), np.full((2, 3), 1.0 / 3.0))
    y = sharpen_scores(np.array([[0.9, 0.1, 0.0]]), 1e6)
    assert np.max(np.abs(y - 1.0 / 3.0)) <= 1e-6


def test_sharpen_rows_sum_to_one():
    y = sharpen_scores(np.random.default_rng(0).uniform(size=(4, 5)), 0.05)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-9)


def test_bce_examples():
    assert weighted_bce_loss(np.array([[0.9, 0.1]]), np.array([[1.0, 0.0]])) == pytest.approx(0.10536, abs=1e-5)
    assert weighted_bce_loss(np.array([[0.5]]), np.array([[1.0]])) == 0.0
    assert weighted_bce_loss(np.eye(2), np.eye(2)) <= 1e-6


def test_bce_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        weighted_bce_loss(np.ones((2, 2)) * 0.5, np.ones((2, 3)))


# Reverse-mode primitives ------------------------------------------------------------

@pytest.mark.parametrize("name,build", [
    ("l2_normalize", lambda t, a: t.l2_normalize(a)),
    ("softmax_rows", lambda t, a: t.softmax_rows(a, 0.5)),
    ("relu_affine", lambda t, a: t.relu(t.matmul(a, t.constant(np.arange(6.0).reshape(3, 2) - 2.5)))),
    ("message_normalize", lambda t, a: t.message_normalize(a, t.scale(t.gather_rows(a, [1, 0]), 2.0))),
    ("concat_gather", lambda t, a: t.concat([t.gather_rows(a, [0, 0, 1]), t.gather_rows(a, [1, 1, 0])])),
    ("scatter", lambda t, a: t.scatter(a, np.array([[0, 1, 2], [2, 1, 0]]), np.array([[0, 0, 1], [1, 0, 0]]),
                                       (3, 2))),
])
def test_tape_primitives_match_finite_differences(name, build):
    x = np.array([[0.7, -0.4, 1.3], [0.2, 0.9, -0.6]])
    assert tape_gradient_error(build, x) <= 1e-5, name


def test_weighted_bce_node_matches_numeric_loss():
    tape = Tape()
    y_hat = tape.variable([[0.9, 0.1]])
    loss = tape.weighted_bce(y_hat, [[1.0, 0.0]])
    assert float(loss.value) == pytest.approx(0.10536, abs=1e-5)
    tape.backward(loss)
    # d/dp of -(1/2)(log p1 + log(1 - p2))
    np.testing.assert_allclose(y_hat.grad, [[-0.5 / 0.9, 0.5 / 0.9]])


def test_fan_out_accumulates():
    tape = Tape()
    a = tape.variable([[1.0, 2.0]])
    out = tape.add(a, tape.scale(a, 3.0))
    tape.backward(out)
    np.testing.assert_allclose(a.grad, [[4.0, 4.0]])


# End-to-end gradients -----------------------------------------------------------

def differentiable_instance(seed):
    rng = np.random.default_rng(seed)
    for _ in range(20):
        n_d, n_t, d = 3, 3, 4
        network = MatchingNetwork.create(d, hidden_width=5, output_width=4, seed=int(rng.integers(1 << 31)))
        sample = random_sample(rng, n_d, n_t, d)
        errors = check_network_instance(network, sample)
        if errors is not None:
            return network, sample, errors
    pytest.skip("no differentiable instance found")


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(3))
def test_end_to_end_gradients_match_finite_differences(seed):
    _, _, errors = differentiable_instance(seed)
    assert set(errors) >= {"encoder.W1", "gcn.W2", "det_features", "track_histories"}
    for name, error in errors.items():
        assert error <= 1e-3, name


@pytest.mark.slow
def test_qp_gradcheck_suite_passes():
    result = run_qp_suite(seed=7, instances=QP_INSTANCES)
    assert result.instances + result.skipped == QP_INSTANCES
    assert result.passed, result.line()


@pytest.mark.slow
def test_end_to_end_gradcheck_on_twenty_square_instances():
    assert NETWORK_STEP == pytest.approx(1e-4)
    assert GRADCHECK_TEMPERATURE == pytest.approx(1e-3)
    result = run_end_to_end_suite(seed=7, instances=END_TO_END_INSTANCES, max_attempts=200,
                                  shape=END_TO_END_SHAPE)
    assert END_TO_END_SHAPE == (3, 3)
    assert result.instances == 20
    assert result.max_relative_error <= 1e-3, result.line()
    assert result.passed


def test_detaching_qp_changes_gradient():
    config = MatchingConfig(tol=1e-10)
    differences = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        network = MatchingNetwork.create(4, hidden_width=5, output_width=4, seed=seed)
        sample = random_sample(rng, 3, 3, 4)
        _, grads, _ = loss_and_gradients(network, sample, config, temperature=0.5)
        _, detached, _ = loss_and_gradients(network, sample, config, temperature=0.5, detach=True)
        differences.append(sum(np.linalg.norm(grads[k] - detached[k]) for k in grads))
    assert max(differences) > 0.0


def test_forward_scores_are_row_stochastic():
    rng = np.random.default_rng(5)
    network = MatchingNetwork.create(4, hidden_width=6, output_width=4, seed=5)
    _, _, trace = loss_and_gradients(network, random_sample(rng, 2, 3, 4), temperature=0.1)
    np.testing.assert_allclose(trace.y_hat.value.sum(axis=1), 1.0, atol=1e-9)


# Training ----------------------------------------------------------------------------

def test_zero_learning_rate_is_deterministic():
    config = TrainConfig(learning_rate=0.0, weight_decay=0.0, temperature=0.1)
    sample = separable_sample()
    losses = []
    for _ in range(2):
        network = MatchingNetwork.create(3, hidden_width=8, output_width=4, seed=11)
        state = AdamState.zeros(network.parameters())
        updated, state, loss = train_step(sample, network, state, config)
        losses.append(loss)
        for name, value in network.parameters().items():
            np.testing.assert_array_equal(updated.parameters()[name], value)
    assert losses[0] == losses[1]


def test_same_seed_gives_same_trajectory():
    config = TrainConfig(learning_rate=1e-3, temperature=0.1)
    runs = []
    for _ in range(2):
        trainer = Trainer(MatchingNetwork.create(3, hidden_width=8, output_width=4, seed=2), config)
        runs.append(trainer.fit([separable_sample()], epochs=3))
    assert runs[0] == runs[1]


@pytest.mark.slow
def test_training_reduces_loss_on_separable_task():
    config = TrainConfig(learning_rate=1e-2, weight_decay=0.0, temperature=0.1)
    trainer = Trainer(MatchingNetwork.create(3, hidden_width=16, output_width=8, seed=0,
                                             gcn_config=GcnConfig(use_geometry=False)), config)
    losses = trainer.fit([separable_sample()], epochs=200)
    assert len(losses) == 200
    assert min(losses[-20:]) <= 0.5 * losses[0]


def test_training_samples_follow_identities():
    boxes = {1: (10.0, 10.0, 5.0, 10.0), 2: (60.0, 10.0, 5.0, 10.0)}
    gt = GtSequence({f: [LabeledBox(i, b) for i, b in boxes.items()] for f in (1, 2, 3)})
    features = np.array([[1.0, 0.0], [0.0, 1.0]])
    # detections listed in reverse identity order
    frames = {f: (np.array([boxes[2], boxes[1]]), features[::-1]) for f in (1, 2, 3)}
    samples = build_training_samples(frames, gt, max_history=1)
    assert [s.frame for s in samples] == [2, 3]
    np.testing.assert_array_equal(samples[0].labels, [[0.0, 1.0], [1.0, 0.0]])
    assert all(h.shape == (1, 2) for h in samples[1].track_histories)


# Checkpoints -----------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    network = MatchingNetwork.create(5, hidden_width=7, output_width=3, seed=4,
                                     gcn_config=GcnConfig(use_geometry=False, num_layers=2))
    path = tmp_path / "model.gmtc"
    save_checkpoint(network, path)
    loaded = load_checkpoint(path)
    assert path.read_bytes().startswith(MAGIC)
    assert loaded.gcn_config == network.gcn_config
    assert loaded.encoder.activation == network.encoder.activation
    for name, value in network.parameters().items():
        np.testing.assert_array_equal(loaded.parameters()[name], value.astype(np.float32))


def test_checkpoint_rejects_bad_data():
    data = encode_checkpoint(MatchingNetwork.identity(2))
    with pytest.raises(DataIoError):
        decode_checkpoint(b"XXXX" + data[4:])
    with pytest.raises(DataIoError):
        decode_checkpoint(data[:-3])
    with pytest.raises(DataIoError):
        decode_checkpoint(data + b"\x00")


if __name__ == "__main__":
    pytest.main([__file__])
