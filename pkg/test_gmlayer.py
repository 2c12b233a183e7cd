#!/usr/bin/env python3
"""
Tests for affinity construction, the quadratic affinity scatter, the relaxed
matching QP and greedy rounding.
"""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.config.settings import MatchingConfig
from src.models.data_models import AffinityBundle, FrameGraph, GraphKind
from src.models.errors import DimensionMismatch, EmptyGraph, InconsistentIndicators
from src.solvers.graph_matching import (
    assemble_matching_qp, build_affinity_bundle, build_edge_affinity, build_vertex_affinity,
    edge_features, expand_affinity, greedy_round, indicator_matrices, kb_objective,
    kronecker_affinity, match_graphs, matching_objective, solve_matching,
)
from src.solvers.qp_solver import active_set_oracle, solve_qp


def make_graph(features, kind=GraphKind.DETECTION):
    features = np.atleast_2d(np.asarray(features, dtype=float))
    boxes = [[20.0 * i + 10.0, 50.0, 10.0, 20.0] for i in range(features.shape[0])]
    return FrameGraph.from_arrays(features, boxes, kind=kind).finalize()


def random_unit(rng, n, d):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def bundle_from_parts(B, M):
    n_d, n_t = B.shape
    S_D, T_D = indicator_matrices(n_d)
    S_T, T_T = indicator_matrices(n_t)
    Me = np.zeros((S_D.shape[1], S_T.shape[1]))
    return AffinityBundle(B=np.asarray(B, dtype=float), Me=Me, S_D=S_D, T_D=T_D, S_T=S_T, T_T=T_T,
                          M=np.asarray(M, dtype=float))


def test_vertex_affinity_cosines():
    gD = make_graph([[0.6, 0.8], [1.0, 0.0]])
    gT = make_graph([[0.8, 0.6], [0.6, 0.8], [0.0, 1.0]], GraphKind.TRACKLET)
    B = build_vertex_affinity(gD, gT)
    assert B.shape == (2, 3)
    assert B[0, 0] == pytest.approx(0.96)
    assert B[0, 1] == pytest.approx(1.0)
    assert B[1, 2] == pytest.approx(0.0)


def test_vertex_affinity_width_mismatch():
    with pytest.raises(DimensionMismatch):
        build_vertex_affinity(make_graph([[1.0, 0.0]]), make_graph([[1.0, 0.0, 0.0]]))


def test_edge_features_are_unit_and_ordered():
    rng = np.random.default_rng(0)
    H = random_unit(rng, 3, 4)
    E = edge_features(H)
    assert E.shape == (6, 8)
    np.testing.assert_allclose(np.linalg.norm(E, axis=1), 1.0, atol=1e-12)
    # edge 0 is (0, 1), edge 2 is (1, 0)
    np.testing.assert_allclose(E[0], np.concatenate([H[0], H[1]]) / np.sqrt(2))
    np.testing.assert_allclose(E[2], np.concatenate([H[1], H[0]]) / np.sqrt(2))


def test_edge_affinity_reversed_orthogonal_pair():
    """l2([a, b]) against l2([b, a]) with a orthogonal to b is zero."""
    a, b = [1.0, 0.0], [0.0, 1.0]
    gD = make_graph([a, b])
    gT = make_graph([a, b], GraphKind.TRACKLET)
    Me = build_edge_affinity(gD, gT)
    assert Me[0, 0] == pytest.approx(1.0)
    assert Me[0, 1] == pytest.approx(0.0)
    assert np.all(np.abs(Me) <= 1.0 + 1e-12)


def test_indicator_columns_hold_single_one():
    S, T = indicator_matrices(4)
    assert S.shape == T.shape == (4, 12)
    np.testing.assert_array_equal(S.sum(axis=0), 1.0)
    np.testing.assert_array_equal(T.sum(axis=0), 1.0)
    assert not np.any(np.all(S == T, axis=0))


def test_expand_zero_edge_affinity():
    S_D, T_D = indicator_matrices(3)
    S_T, T_T = indicator_matrices(2)
    M = expand_affinity(np.zeros((6, 2)), S_D, T_D, S_T, T_T)
    assert M.shape == (6, 6)
    assert not np.any(M)


def test_expand_all_ones_two_by_two():
    """Exactly four unit entries, at pairs with i != i' and j != j'."""
    S, T = indicator_matrices(2)
    M = expand_affinity(np.ones((2, 2)), S, T, S, T)
    assert np.count_nonzero(M) == 4
    for row, col in zip(*np.nonzero(M)):
        i, j = divmod(row, 2)
        i2, j2 = divmod(col, 2)
        assert i != i2 and j != j2
        assert M[row, col] == 1.0


def test_expand_rejects_inconsistent_indicators():
    S, T = indicator_matrices(2)
    broken = S.copy()
    broken[:, 0] = 1.0
    with pytest.raises(InconsistentIndicators):
        expand_affinity(np.ones((2, 2)), broken, T, S, T)
    with pytest.raises(InconsistentIndicators):
        expand_affinity(np.ones((3, 2)), S, T, S, T)


@settings(max_examples=100, deadline=None)
@given(n_d=st.integers(1, 4), n_t=st.integers(1, 4), seed=st.integers(0, 2**31 - 1))
def test_scatter_equals_kronecker_product(n_d, n_t, seed):
    rng = np.random.default_rng(seed)
    S_D, T_D = indicator_matrices(n_d)
    S_T, T_T = indicator_matrices(n_t)
    Me = rng.uniform(-1, 1, size=(S_D.shape[1], S_T.shape[1]))
    scattered = expand_affinity(Me, S_D, T_D, S_T, T_T)
    reference = kronecker_affinity(Me, S_D, T_D, S_T, T_T)
    np.testing.assert_allclose(scattered, reference, atol=1e-12, rtol=0)


@pytest.mark.parametrize("seed", range(10))
def test_feature_edge_affinity_gives_symmetric_m(seed):
    rng = np.random.default_rng(seed)
    bundle = build_affinity_bundle(make_graph(random_unit(rng, 3, 5)),
                                   make_graph(random_unit(rng, 3, 5), GraphKind.TRACKLET))
    np.testing.assert_allclose(bundle.M, bundle.M.T, atol=1e-12)
    assert np.all(np.abs(bundle.B) <= 1.0 + 1e-12)


def test_single_vertex_problem():
    bundle = bundle_from_parts(np.array([[0.4]]), np.zeros((1, 1)))
    problem = assemble_matching_qp(bundle, 1, 1)
    np.testing.assert_allclose(problem.Qmat, 0.0)
    assert problem.qvec[0] == pytest.approx(-0.4)
    np.testing.assert_allclose(solve_qp(problem).xstar, [1.0], atol=1e-8)


def test_square_separable_problem_matches_oracle():
    """With M = 0 and B = I the relaxed optimum is a symmetric blend that rounds to identity."""
    bundle = bundle_from_parts(np.eye(2), np.zeros((4, 4)))
    problem = assemble_matching_qp(bundle, 2, 2)
    x = solve_qp(problem).xstar
    oracle = active_set_oracle(problem).xstar
    np.testing.assert_allclose(x, oracle, atol=1e-7)
    np.testing.assert_allclose(x, [0.75, 0.25, 0.25, 0.75], atol=1e-7)
    assert greedy_round(x.reshape(2, 2)) == [(0, 0), (1, 1)]


def test_rectangular_single_row_problem():
    bundle = bundle_from_parts(np.array([[0.3, 0.7]]), np.zeros((2, 2)))
    problem = assemble_matching_qp(bundle, 1, 2)
    x = solve_qp(problem).xstar
    assert x.sum() == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_allclose(x, [0.4, 0.6], atol=1e-7)
    assert greedy_round(x.reshape(1, 2)) == [(0, 1)]


def test_more_detections_than_tracklets_bounds_rows():
    rng = np.random.default_rng(4)
    gD = make_graph(random_unit(rng, 3, 6))
    gT = make_graph(random_unit(rng, 2, 6), GraphKind.TRACKLET)
    result = match_graphs(gD, gT)
    np.testing.assert_allclose(result.X.sum(axis=0), 1.0, atol=1e-6)
    assert np.all(result.X.sum(axis=1) <= 1.0 + 1e-6)
    assert 1 <= len(result.assignment) <= 2


@pytest.mark.parametrize("X, expected", [
    (np.eye(3), [(0, 0), (1, 1), (2, 2)]),
    (np.array([[0.9, 0.1], [0.8, 0.2]]), [(0, 0), (1, 1)]),
    (np.array([[0.3, 0.7]]), [(0, 1)]),
    (np.zeros((0, 3)), []),
    (np.array([[0.5, 0.5], [0.5, 0.5]]), [(0, 0), (1, 1)]),
    (np.array([[-0.1, 0.0]]), []),
])
def test_greedy_round_examples(X, expected):
    assert greedy_round(X) == expected


@settings(max_examples=50, deadline=None)
@given(perm=st.permutations(list(range(5))))
def test_greedy_round_is_idempotent_on_permutations(perm):
    P = np.eye(5)[list(perm)]
    assert greedy_round(P) == [(i, perm[i]) for i in range(5)]


@pytest.mark.parametrize("seed", range(10))
def test_self_match_is_identity(seed):
    rng = np.random.default_rng(seed)
    features = random_unit(rng, 4, 8)
    result = match_graphs(make_graph(features), make_graph(features, GraphKind.TRACKLET))
    assert sorted(result.assignment) == [(i, i) for i in range(4)]


@pytest.mark.slow
def test_planted_permutation_recovery():
    """Noisy orthonormal features are matched back to the planted permutation in every trial."""
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        basis, _ = np.linalg.qr(rng.normal(size=(8, 4)))
        clean = basis.T
        perm = rng.permutation(4)
        noise = rng.normal(size=(4, 8))
        noise *= rng.uniform(0.0, 0.1, size=(4, 1)) / np.linalg.norm(noise, axis=1, keepdims=True)
        gD = make_graph(clean + noise)
        gT = make_graph(clean[perm], GraphKind.TRACKLET)
        result = match_graphs(gD, gT)
        inverse = np.argsort(perm)
        assert sorted(result.assignment) == [(i, int(inverse[i])) for i in range(4)], f"trial {trial}"


@pytest.mark.slow
def test_relaxation_lower_bounds_every_permutation():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 5))
        bundle = build_affinity_bundle(make_graph(random_unit(rng, n, 4)),
                                       make_graph(random_unit(rng, n, 4), GraphKind.TRACKLET))
        problem = assemble_matching_qp(bundle, n, n)
        relaxed = matching_objective(bundle, solve_qp(problem).xstar)
        for perm in itertools.permutations(range(n)):
            x = np.eye(n)[list(perm)].ravel()
            assert relaxed <= matching_objective(bundle, x) + 1e-7, f"seed {seed}"


@pytest.mark.slow
def test_relaxed_scores_stay_feasible():
    config = MatchingConfig()
    for seed in range(500):
        rng = np.random.default_rng(seed)
        n_d, n_t = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        d = int(rng.integers(2, 9))
        result = match_graphs(make_graph(random_unit(rng, n_d, d)),
                              make_graph(random_unit(rng, n_t, d), GraphKind.TRACKLET), config)
        X = result.X
        equal_axis = 1 if n_d <= n_t else 0
        np.testing.assert_allclose(X.sum(axis=equal_axis), 1.0, atol=1e-6)
        assert np.all(X.sum(axis=0) <= 1 + 1e-6) and np.all(X.sum(axis=1) <= 1 + 1e-6)
        assert np.all(X >= -1e-8)
        np.testing.assert_allclose(result.sharpened.sum(axis=1), 1.0, atol=1e-9)
        assert len(set(i for i, _ in result.assignment)) == len(result.assignment)
        assert len(set(j for _, j in result.assignment)) == len(result.assignment)


def test_scaling_problem_keeps_assignment():
    rng = np.random.default_rng(8)
    bundle = build_affinity_bundle(make_graph(random_unit(rng, 3, 5)),
                                   make_graph(random_unit(rng, 3, 5), GraphKind.TRACKLET))
    problem = assemble_matching_qp(bundle, 3, 3)
    base = greedy_round(solve_qp(problem).xstar.reshape(3, 3))
    scaled = greedy_round(solve_qp(problem.scaled(7.5)).xstar.reshape(3, 3))
    assert base == scaled


def test_empty_graph_short_circuits():
    gD = make_graph(np.eye(2))
    empty = FrameGraph(vertices=(), kind=GraphKind.TRACKLET)
    result = match_graphs(gD, empty)
    assert result.X.shape == (2, 0)
    assert result.assignment == []


def test_affinity_bundle_requires_vertices_on_both_sides():
    gD = make_graph(np.eye(2))
    empty = FrameGraph(vertices=(), kind=GraphKind.TRACKLET)
    with pytest.raises(EmptyGraph):
        build_affinity_bundle(gD, empty)
    with pytest.raises(EmptyGraph):
        solve_matching(bundle_from_parts(np.zeros((2, 0)), np.zeros((0, 0))))


def test_affinity_bundle_normalizes_raw_features():
    raw = FrameGraph.from_arrays(np.array([[3.0, 4.0], [0.0, 2.0]]), [[10, 50, 10, 20], [30, 50, 10, 20]])
    assert not raw.is_finalized
    gT = make_graph([[0.6, 0.8], [0.0, 1.0]], GraphKind.TRACKLET)
    bundle = build_affinity_bundle(raw, gT)
    assert np.allclose(bundle.B, build_vertex_affinity(raw.finalize(), gT))
    assert bundle.B[0, 0] == pytest.approx(1.0)


@pytest.mark.parametrize("A1, A2, B, perm, expected", [
    (np.eye(3), np.eye(3), np.zeros((3, 3)), [0, 1, 2], 0.0),
    (np.array([[0, 1], [1, 0]]), np.array([[0, 2], [2, 0]]), np.zeros((2, 2)), [0, 1], 1.0),
    (np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2), np.eye(2), -2.0),
])
def test_kb_objective_examples(A1, A2, B, perm, expected):
    assert kb_objective(A1, A2, B, perm) == pytest.approx(expected)


def test_kb_objective_shape_check():
    with pytest.raises(DimensionMismatch):
        kb_objective(np.eye(2), np.eye(3), np.eye(2), [0, 1])


if __name__ == "__main__":
    pytest.main([__file__])
