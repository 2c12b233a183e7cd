"""
Minimal reverse-mode differentiation over numpy arrays.

A Tape records each primitive as it is evaluated (a Wengert list). backward()
walks the list once in reverse creation order and accumulates gradients
additively into every parent, so fan-out is handled by summation. Only the
primitives the matching network needs are provided.
"""

from typing import Callable, List, Optional, Sequence

import numpy as np

from ..config.settings import MatchingConfig
from ..models.errors import NonFiniteGradient, ShapeMismatch, ZeroVector
from ..solvers.graph_matching import matching_problem
from ..solvers.qp_solver import backward_qp, solve_qp
from ..solvers.scoring import CLAMP_HIGH, CLAMP_LOW, bce_weight


class Node:
    """One recorded value with its gradient slot and local backward rule."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "name")

    def __init__(self, value: np.ndarray, parents: Sequence["Node"] = (),
                 backward_fn: Optional[Callable] = None, name: str = ""):
        self.value = value
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self) -> str:
        return f"Node({self.name or 'op'}, shape={self.shape})"


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Records primitives in evaluation order."""

    def __init__(self):
        self.nodes: List[Node] = []

    def _record(self, value, parents, backward_fn, name="") -> Node:
        node = Node(np.asarray(value, dtype=float), parents, backward_fn, name)
        self.nodes.append(node)
        return node

    # Leaves -----------------------------------------------------------------

    def variable(self, value, name: str = "") -> Node:
        return self._record(np.array(value, dtype=float), (), None, name)

    def constant(self, value, name: str = "") -> Node:
        return self.variable(value, name)

    # Linear algebra ---------------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        return self._record(a.value @ b.value, (a, b),
                            lambda g: (g @ b.value.T, a.value.T @ g), "matmul")

    def matmul_nt(self, a: Node, b: Node) -> Node:
        """a @ b^T"""
        return self._record(a.value @ b.value.T, (a, b),
                            lambda g: (g @ b.value, g.T @ a.value), "matmul_nt")

    def transpose(self, a: Node) -> Node:
        return self._record(a.value.T, (a,), lambda g: (g.T,), "transpose")

    def add(self, a: Node, b: Node) -> Node:
        return self._record(a.value + b.value, (a, b),
                            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")

    def add_const(self, a: Node, c: np.ndarray) -> Node:
        return self._record(a.value + c, (a,), lambda g: (g,), "add_const")

    def scale(self, a: Node, c: float) -> Node:
        return self._record(a.value * c, (a,), lambda g: (g * c,), "scale")

    def affine(self, x: Node, W: Node, b: Node) -> Node:
        """x @ W + b with b broadcast over rows."""
        return self._record(x.value @ W.value + b.value, (x, W, b),
                            lambda g: (g @ W.value.T, x.value.T @ g, g.sum(axis=0)), "affine")

    def relu(self, a: Node) -> Node:
        mask = a.value > 0
        return self._record(a.value * mask, (a,), lambda g: (g * mask,), "relu")

    # Structure ---------------------------------------------------------------

    def concat(self, nodes: Sequence[Node], axis: int = 1) -> Node:
        sizes = [n.value.shape[axis] for n in nodes]
        splits = np.cumsum(sizes)[:-1]
        return self._record(np.concatenate([n.value for n in nodes], axis=axis), nodes,
                            lambda g: tuple(np.split(g, splits, axis=axis)), "concat")

    def gather_rows(self, a: Node, index: np.ndarray) -> Node:
        index = np.asarray(index, dtype=int)

        def backward(g):
            out = np.zeros_like(a.value)
            np.add.at(out, index, g)
            return (out,)

        return self._record(a.value[index], (a,), backward, "gather_rows")

    def scatter(self, a: Node, rows: np.ndarray, cols: np.ndarray, shape) -> Node:
        """out[rows[k], cols[k]] += a[k] elementwise, with rows/cols shaped like a."""
        out = np.zeros(shape)
        np.add.at(out, (rows, cols), a.value)
        return self._record(out, (a,), lambda g: (g[rows, cols],), "scatter")

    # Normalization ------------------------------------------------------------

    def l2_normalize(self, a: Node, eps: float = 1e-12) -> Node:
        """Row-wise x / ||x||."""
        norms = np.linalg.norm(a.value, axis=1, keepdims=True)
        if np.any(norms < eps):
            raise ZeroVector("cannot normalize a zero row")
        y = a.value / norms

        def backward(g):
            return ((g - y * np.sum(g * y, axis=1, keepdims=True)) / norms,)

        return self._record(y, (a,), backward, "l2_normalize")

    def message_normalize(self, h: Node, m: Node, eps: float = 1e-12) -> Node:
        """
        Row-wise h + ||h|| m / ||m||.

        Rows whose message is zero pass h through unchanged.
        """
        h_norm = np.linalg.norm(h.value, axis=1, keepdims=True)
        m_norm = np.linalg.norm(m.value, axis=1, keepdims=True)
        live = (m_norm > eps).astype(float)
        safe_m = np.where(m_norm > eps, m_norm, 1.0)
        safe_h = np.where(h_norm > eps, h_norm, 1.0)
        m_hat = m.value / safe_m * live

        def backward(g):
            gm = np.sum(g * m_hat, axis=1, keepdims=True)
            dh = g + (h.value / safe_h) * gm * (h_norm > eps)
            dm = h_norm * (g - m_hat * gm) / safe_m * live
            return dh, dm

        return self._record(h.value + h_norm * m_hat, (h, m), backward, "message_normalize")

    # Scores and loss -------------------------------------------------------------

    def softmax_rows(self, a: Node, temperature: float) -> Node:
        logits = a.value / temperature
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        y = e / e.sum(axis=1, keepdims=True)

        def backward(g):
            return (y * (g - np.sum(g * y, axis=1, keepdims=True)) / temperature,)

        return self._record(y, (a,), backward, "softmax_rows")

    def weighted_bce(self, y_hat: Node, labels: np.ndarray, n_t: Optional[int] = None) -> Node:
        labels = np.asarray(labels, dtype=float)
        if labels.shape != y_hat.shape:
            raise ShapeMismatch(f"scores {y_hat.shape} and labels {labels.shape} differ")
        n_t = labels.shape[1] if n_t is None else n_t
        k = bce_weight(n_t)
        count = labels.size
        p = np.clip(y_hat.value, CLAMP_LOW, CLAMP_HIGH)
        inside = (y_hat.value >= CLAMP_LOW) & (y_hat.value <= CLAMP_HIGH)
        loss = -np.sum(k * labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)) / count

        def backward(g):
            local = -(k * labels / p - (1.0 - labels) / (1.0 - p)) / count
            return (g * local * inside,)

        return self._record(loss, (y_hat,), backward, "weighted_bce")

    def qp_matching(self, M: Node, B: Node, config: Optional[MatchingConfig] = None,
                    detach: bool = False) -> Node:
        """
        Relaxed matching score map X from quadratic affinity M and vertex affinity B.

        The backward pass maps dL/dX through the QP optimum onto dL/dM and dL/dB.
        With detach the score map is treated as a constant.
        """
        config = config or MatchingConfig()
        n_d, n_t = B.shape
        problem = matching_problem(B.value, M.value)
        solution = solve_qp(problem, tol=config.tol, max_iter=config.max_iter, polish=config.polish)

        def backward(g):
            if detach:
                return None, None
            grads = backward_qp(problem, solution, g.ravel())
            return -2.0 * grads.dQ, -grads.dq.reshape(n_d, n_t)

        return self._record(solution.xstar.reshape(n_d, n_t), (M, B), backward, "qp_matching")

    # Reverse sweep ---------------------------------------------------------------

    def backward(self, output: Node, seed: Optional[np.ndarray] = None) -> None:
        """Accumulate d output / d node into node.grad for every node on the tape."""
        for node in self.nodes:
            node.grad = None
        output.grad = np.ones_like(output.value) if seed is None else np.asarray(seed, dtype=float)

        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            parent_grads = node.backward_fn(node.grad)
            for parent, grad in zip(node.parents, parent_grads):
                if grad is None:
                    continue
                grad = np.asarray(grad, dtype=float).reshape(parent.value.shape)
                if not np.all(np.isfinite(grad)):
                    raise NonFiniteGradient(f"non-finite gradient flowing out of {node.name}")
                parent.grad = grad if parent.grad is None else parent.grad + grad
