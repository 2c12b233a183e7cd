"""
Graph matching layer.

Builds the vertex and edge affinities between a detection graph and a tracklet
graph, scatters the edge affinity into the quadratic affinity over assignment
pairs, relaxes the matching to a convex QP and rounds the relaxed score map to
a one-to-one assignment.

Assignment vectors are row-major: entry i * n_t + j scores detection i against
tracklet j.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np

from .qp_solver import QpProblem, QpSolution, solve_qp
from ..config.settings import MatchingConfig
from ..models.data_models import AffinityBundle, FrameGraph, MatchResult
from ..models.errors import DimensionMismatch, EmptyGraph, InconsistentIndicators
from .scoring import sharpen_scores
from ..utils.helpers import l2_normalize_rows
from ..utils.logging_config import get_logger

logger = get_logger(__name__)


def _feature_width(graph: FrameGraph) -> int:
    return graph.features.shape[1] if graph.size else 0


def build_vertex_affinity(gD: FrameGraph, gT: FrameGraph) -> np.ndarray:
    """Cosine similarity B[i, j] between detection i and tracklet j (features are unit vectors)."""
    if gD.size and gT.size and _feature_width(gD) != _feature_width(gT):
        raise DimensionMismatch(f"feature widths differ: {_feature_width(gD)} vs {_feature_width(gT)}")
    if not gD.size or not gT.size:
        return np.zeros((gD.size, gT.size))
    return gD.features @ gT.features.T


def edge_features(features: np.ndarray) -> np.ndarray:
    """
    L2-normalized concatenation [h_i, h_i'] for every ordered pair i != i'.

    Args:
        features: (n, d) vertex features

    Returns:
        (n * (n - 1), 2d) edge features in row-major edge order
    """
    H = np.asarray(features, dtype=float)
    n = H.shape[0]
    if n < 2:
        return np.zeros((0, 2 * H.shape[1] if H.ndim == 2 else 0))
    start, end = _edge_endpoints(n)
    return l2_normalize_rows(np.hstack([H[start], H[end]]))


def _edge_endpoints(n: int) -> Tuple[np.ndarray, np.ndarray]:
    start, end = np.nonzero(~np.eye(n, dtype=bool))
    return start, end


def build_edge_affinity(gD: FrameGraph, gT: FrameGraph) -> np.ndarray:
    """Cosine similarity Me[u, v] between detection edge u and tracklet edge v."""
    if gD.size and gT.size and _feature_width(gD) != _feature_width(gT):
        raise DimensionMismatch(f"feature widths differ: {_feature_width(gD)} vs {_feature_width(gT)}")
    ED = edge_features(gD.features) if gD.size else np.zeros((0, 0))
    ET = edge_features(gT.features) if gT.size else np.zeros((0, 0))
    if ED.shape[0] == 0 or ET.shape[0] == 0:
        return np.zeros((ED.shape[0], ET.shape[0]))
    return ED @ ET.T


def indicator_matrices(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Start-vertex and end-vertex indicators S, T of shape (n, n * (n - 1))."""
    start, end = _edge_endpoints(n)
    cols = np.arange(start.size)
    S = np.zeros((n, start.size))
    T = np.zeros((n, start.size))
    S[start, cols] = 1.0
    T[end, cols] = 1.0
    return S, T


def _endpoints_from_indicator(I: np.ndarray, name: str) -> np.ndarray:
    I = np.asarray(I)
    if I.ndim != 2:
        raise InconsistentIndicators(f"{name} must be a matrix")
    if I.shape[1] and not (np.all((I == 0) | (I == 1)) and np.all(I.sum(axis=0) == 1)):
        raise InconsistentIndicators(f"every column of {name} must hold exactly one 1")
    return np.argmax(I, axis=0) if I.shape[1] else np.zeros(0, dtype=int)


def _check_indicator_shapes(Me, S_D, T_D, S_T, T_T) -> Tuple[int, int]:
    if S_D.shape != T_D.shape or S_T.shape != T_T.shape:
        raise InconsistentIndicators("start and end indicators of a graph must share a shape")
    if Me.shape != (S_D.shape[1], S_T.shape[1]):
        raise InconsistentIndicators(
            f"Me has shape {Me.shape} but indicators describe {S_D.shape[1]} x {S_T.shape[1]} edges")
    return S_D.shape[0], S_T.shape[0]


def expand_affinity(Me: np.ndarray, S_D: np.ndarray, T_D: np.ndarray,
                    S_T: np.ndarray, T_T: np.ndarray) -> np.ndarray:
    """
    Scatter the edge affinity into the quadratic affinity over assignment pairs.

    M[(i, j), (i', j')] = Me[u, v] where detection edge u = (i, i') and
    tracklet edge v = (j, j').
    """
    Me = np.asarray(Me, dtype=float)
    n_d, n_t = _check_indicator_shapes(Me, S_D, T_D, S_T, T_T)
    start_d = _endpoints_from_indicator(S_D, "S_D")
    end_d = _endpoints_from_indicator(T_D, "T_D")
    start_t = _endpoints_from_indicator(S_T, "S_T")
    end_t = _endpoints_from_indicator(T_T, "T_T")

    M = np.zeros((n_d * n_t, n_d * n_t))
    rows = start_d[:, None] * n_t + start_t[None, :]
    cols = end_d[:, None] * n_t + end_t[None, :]
    np.add.at(M, (rows, cols), Me)
    return M


def kronecker_affinity(Me: np.ndarray, S_D: np.ndarray, T_D: np.ndarray,
                       S_T: np.ndarray, T_T: np.ndarray) -> np.ndarray:
    """Literal (S_D kron S_T) diag(vec Me) (T_D kron T_T)^T; reference for expand_affinity."""
    Me = np.asarray(Me, dtype=float)
    _check_indicator_shapes(Me, S_D, T_D, S_T, T_T)
    return np.kron(S_D, S_T) @ np.diag(Me.ravel()) @ np.kron(T_D, T_T).T


def build_affinity_bundle(gD: FrameGraph, gT: FrameGraph) -> AffinityBundle:
    """
    Affinities of two nonempty graphs; unnormalized vertex features are finalized first.

    Raises:
        EmptyGraph: either graph has no vertices
    """
    gD.require_vertices()
    gT.require_vertices()
    gD = gD if gD.is_finalized else gD.finalize()
    gT = gT if gT.is_finalized else gT.finalize()
    B = build_vertex_affinity(gD, gT)
    Me = build_edge_affinity(gD, gT)
    S_D, T_D = indicator_matrices(gD.size)
    S_T, T_T = indicator_matrices(gT.size)
    M = expand_affinity(Me, S_D, T_D, S_T, T_T)
    return AffinityBundle(B=B, Me=Me, S_D=S_D, T_D=T_D, S_T=S_T, T_T=T_T, M=M)


def diagonal_weight(n_d: int, n_t: int) -> float:
    """rho = (max(n_d, n_t) - 1)^2, the diagonal shift that keeps Q positive semidefinite."""
    return float((max(n_d, n_t) - 1) ** 2)


def assignment_constraints(n_d: int, n_t: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Constraint blocks (G, h, A, b) of the relaxed assignment polytope.

    The smaller side gets unit-sum equalities, the larger side sums <= 1, and
    square problems get equalities on both sides. Every entry is nonnegative.
    """
    n = n_d * n_t
    row_sums = np.kron(np.eye(n_d), np.ones((1, n_t)))
    col_sums = np.kron(np.ones((1, n_d)), np.eye(n_t))
    nonneg = -np.eye(n)

    if n_d < n_t:
        A, G = row_sums, np.vstack([col_sums, nonneg])
        h = np.concatenate([np.ones(n_t), np.zeros(n)])
    elif n_d > n_t:
        A, G = col_sums, np.vstack([row_sums, nonneg])
        h = np.concatenate([np.ones(n_d), np.zeros(n)])
    else:
        A, G = np.vstack([row_sums, col_sums]), nonneg
        h = np.zeros(n)
    return G, h, A, np.ones(A.shape[0])


def assemble_matching_qp(bundle: AffinityBundle, n_d: int, n_t: int) -> QpProblem:
    """Relaxed matching QP: Q = 2(rho I - M), q = -vec(B), over the assignment polytope."""
    if bundle.B.shape != (n_d, n_t):
        raise DimensionMismatch(f"affinities do not describe a {n_d} x {n_t} matching")
    return matching_problem(bundle.B, bundle.M)


def matching_problem(B: np.ndarray, M: np.ndarray) -> QpProblem:
    n_d, n_t = B.shape
    if M.shape != (n_d * n_t, n_d * n_t):
        raise DimensionMismatch(f"quadratic affinity {M.shape} does not fit a {n_d} x {n_t} matching")
    if not (np.all(np.isfinite(B)) and np.all(np.isfinite(M))):
        raise DimensionMismatch("affinities have non-finite entries")
    M = 0.5 * (M + M.T)
    rho = diagonal_weight(n_d, n_t)
    Q = 2.0 * (rho * np.eye(n_d * n_t) - M)
    G, h, A, b = assignment_constraints(n_d, n_t)
    return QpProblem.create(Q, -np.asarray(B, dtype=float).ravel(), G, h, A, b)


def matching_objective(bundle: AffinityBundle, x: np.ndarray) -> float:
    """x^T (rho I - M) x - vec(B)^T x for a relaxed or permutation assignment vector."""
    n_d, n_t = bundle.B.shape
    x = np.asarray(x, dtype=float).ravel()
    M = 0.5 * (bundle.M + bundle.M.T)
    return float(diagonal_weight(n_d, n_t) * x @ x - x @ M @ x - bundle.B.ravel() @ x)


def greedy_round(X: np.ndarray) -> List[Tuple[int, int]]:
    """
    Round a score map to a one-to-one assignment.

    Repeatedly takes the largest remaining positive entry (lowest row-major
    index on ties) and strikes out its row and column.
    """
    scores = np.array(X, dtype=float)
    if scores.size == 0:
        return []
    assignment = []
    for _ in range(min(scores.shape)):
        flat = int(np.argmax(scores))
        i, j = divmod(flat, scores.shape[1])
        if not scores[i, j] > 0:
            break
        assignment.append((i, j))
        scores[i, :] = -np.inf
        scores[:, j] = -np.inf
    return assignment


def solve_matching(bundle: AffinityBundle, config: Optional[MatchingConfig] = None) -> Tuple[QpProblem, QpSolution]:
    config = config or MatchingConfig()
    n_d, n_t = bundle.B.shape
    if n_d == 0 or n_t == 0:
        raise EmptyGraph(f"cannot solve a {n_d}x{n_t} matching")
    problem = assemble_matching_qp(bundle, n_d, n_t)
    solution = solve_qp(problem, tol=config.tol, max_iter=config.max_iter, polish=config.polish)
    return problem, solution


def match_graphs(gD: FrameGraph, gT: FrameGraph, config: Optional[MatchingConfig] = None) -> MatchResult:
    """
    Match a detection graph against a tracklet graph.

    Args:
        gD: Finalized detection graph
        gT: Finalized tracklet graph
        config: Solver tolerances and softmax temperature

    Returns:
        MatchResult with the relaxed score map, greedy assignment and sharpened scores
    """
    config = config or MatchingConfig()
    if gD.size == 0 or gT.size == 0:
        return MatchResult.empty(gD.size, gT.size)

    bundle = build_affinity_bundle(gD, gT)
    problem, solution = solve_matching(bundle, config)
    X = solution.xstar.reshape(gD.size, gT.size)
    assignment = greedy_round(X)
    logger.debug(f"Matched {gD.size} detections to {gT.size} tracklets: {len(assignment)} pairs, "
                 f"{solution.iterations} iterations")
    return MatchResult(X=X, assignment=assignment, sharpened=sharpen_scores(X, config.temperature),
                       objective=problem.objective(solution.xstar), iterations=solution.iterations)


def _as_permutation_matrix(permutation, n: int) -> np.ndarray:
    P = np.asarray(permutation)
    if P.ndim == 2:
        return P.astype(float)
    matrix = np.zeros((n, n))
    matrix[np.arange(n), P.astype(int)] = 1.0
    return matrix


def kb_objective(adjacency1: np.ndarray, adjacency2: np.ndarray, B: np.ndarray,
                 permutation: Sequence[int]) -> float:
    """
    Koopmans-Beckmann objective 1/2 ||A1 P - P A2||_F^2 - tr(B^T P).

    permutation is either a permutation matrix or the column index of each row.
    """
    A1 = np.asarray(adjacency1, dtype=float)
    A2 = np.asarray(adjacency2, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A1.shape[0]
    if A1.shape != (n, n) or A2.shape != (n, n) or B.shape != (n, n):
        raise DimensionMismatch(f"expected {n} x {n} adjacencies and affinity")
    P = _as_permutation_matrix(permutation, n)
    diff = A1 @ P - P @ A2
    return float(0.5 * np.sum(diff * diff) - np.trace(B.T @ P))
