"""Solvers package: the convex QP core and the graph matching layer built on it."""

from .qp_solver import (
    QpProblem, QpSolution, QpGradients, KktResidual,
    solve_qp, backward_qp, active_set_oracle, kkt_residual, dump_problem,
)
from .graph_matching import (
    build_vertex_affinity, build_edge_affinity, edge_features, indicator_matrices,
    expand_affinity, kronecker_affinity, build_affinity_bundle, assemble_matching_qp, matching_problem,
    matching_objective, greedy_round, solve_matching, match_graphs, kb_objective,
)

__all__ = [
    'QpProblem', 'QpSolution', 'QpGradients', 'KktResidual',
    'solve_qp', 'backward_qp', 'active_set_oracle', 'kkt_residual', 'dump_problem',
    'build_vertex_affinity', 'build_edge_affinity', 'edge_features', 'indicator_matrices',
    'expand_affinity', 'kronecker_affinity', 'build_affinity_bundle', 'assemble_matching_qp', 'matching_problem',
    'matching_objective', 'greedy_round', 'solve_matching', 'match_graphs', 'kb_objective',
]
