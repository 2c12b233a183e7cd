"""
Dense convex quadratic programming.

Problems take the standard form

    minimize    1/2 x^T Q x + q^T x
    subject to  G x <= h,  A x = b

and are solved with a Mehrotra predictor-corrector primal-dual interior point
method over the reduced Newton system, optionally followed by an active-set
polishing pass. backward_qp differentiates a scalar loss through the optimum by
implicit differentiation of the KKT conditions, and active_set_oracle gives the
exact optimum of small problems by enumeration for testing.
"""

import itertools
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from ..models.errors import (
    DimensionMismatch, Infeasible, IterationLimit, NotConvex, SingularKkt, StaleSolution, TooLarge,
)
from ..utils.logging_config import get_logger

logger = get_logger(__name__)


RIDGE_MARGIN = 1e-8
RANK_THRESHOLD = 1e-10
STEP_FRACTION = 0.99
DEGENERATE_THRESHOLD = 1e-8
DEGENERATE_JITTER = 1e-10
BACKWARD_RESIDUAL_LIMIT = 1e-6
BACKWARD_COND_LIMIT = 1e12
DIVERGENCE_LIMIT = 1e12
ORACLE_MAX_VARIABLES = 12
ORACLE_MAX_INEQUALITIES = 16
ORACLE_TOL = 1e-9


@dataclass(frozen=True)
class QpProblem:
    """Standard-form convex QP. Empty constraint blocks have zero rows."""
    Qmat: np.ndarray
    qvec: np.ndarray
    Gineq: np.ndarray
    hineq: np.ndarray
    Aeq: np.ndarray
    beq: np.ndarray

    @classmethod
    def create(cls, Q, q, G=None, h=None, A=None, b=None) -> "QpProblem":
        """Build a problem, filling missing constraint blocks and checking shapes."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        q = np.asarray(q, dtype=float).ravel()
        n = q.shape[0]
        if Q.shape != (n, n):
            raise DimensionMismatch(f"Q has shape {Q.shape}, expected ({n}, {n})")

        G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=float).reshape(-1, n)
        h = np.zeros(0) if h is None else np.asarray(h, dtype=float).ravel()
        A = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float).reshape(-1, n)
        b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
        if G.shape[0] != h.shape[0]:
            raise DimensionMismatch(f"G has {G.shape[0]} rows but h has {h.shape[0]} entries")
        if A.shape[0] != b.shape[0]:
            raise DimensionMismatch(f"A has {A.shape[0]} rows but b has {b.shape[0]} entries")
        return cls(Qmat=Q, qvec=q, Gineq=G, hineq=h, Aeq=A, beq=b)

    @property
    def n(self) -> int:
        return self.qvec.shape[0]

    @property
    def m(self) -> int:
        return self.hineq.shape[0]

    @property
    def p(self) -> int:
        return self.beq.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.Qmat @ x + self.qvec @ x)

    def scaled(self, factor: float) -> "QpProblem":
        """Same feasible set with (Q, q) multiplied by factor."""
        return QpProblem(self.Qmat * factor, self.qvec * factor, self.Gineq, self.hineq, self.Aeq, self.beq)


@dataclass(frozen=True)
class QpSolution:
    xstar: np.ndarray
    lambdastar: np.ndarray
    nustar: np.ndarray
    kkt_residual: float
    iterations: int
    ridge: float = 0.0
    eq_rows: Tuple[int, ...] = ()
    polished: bool = False

    def objective(self, problem: QpProblem) -> float:
        return problem.objective(self.xstar)


@dataclass(frozen=True)
class QpGradients:
    """Gradients of a scalar loss with respect to every problem datum."""
    dQ: np.ndarray
    dq: np.ndarray
    dG: np.ndarray
    dh: np.ndarray
    dA: np.ndarray
    db: np.ndarray
    degenerate: bool = False


@dataclass(frozen=True)
class KktResidual:
    stationarity: float
    primal_equality: float
    primal_inequality: float
    complementarity: float
    dual_feasibility: float

    @property
    def max(self) -> float:
        return max(self.stationarity, self.primal_equality, self.primal_inequality,
                   self.complementarity, self.dual_feasibility)


def _inf_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def kkt_residual(problem: QpProblem, x: np.ndarray, lam: np.ndarray, nu: np.ndarray,
                 ridge: float = 0.0) -> KktResidual:
    """Max-norm residual of each KKT condition family at (x, lambda, nu)."""
    Q = _symmetric(problem.Qmat) + ridge * np.eye(problem.n)
    slack = problem.Gineq @ x - problem.hineq
    grad = Q @ x + problem.qvec + problem.Gineq.T @ lam + problem.Aeq.T @ nu
    return KktResidual(
        stationarity=_inf_norm(grad),
        primal_equality=_inf_norm(problem.Aeq @ x - problem.beq),
        primal_inequality=_inf_norm(np.maximum(slack, 0.0)),
        complementarity=_inf_norm(lam * slack),
        dual_feasibility=_inf_norm(np.maximum(-lam, 0.0)),
    )


def _symmetric(Q: np.ndarray) -> np.ndarray:
    return 0.5 * (Q + Q.T)


def _convexify(Q: np.ndarray) -> Tuple[np.ndarray, float]:
    """Symmetrize Q and add a ridge when it has a negative eigenvalue."""
    Qs = _symmetric(Q)
    if Qs.shape[0] == 0:
        return Qs, 0.0
    if not np.all(np.isfinite(Qs)):
        raise NotConvex("Q has non-finite entries")
    lam_min = float(linalg.eigvalsh(Qs)[0])
    if lam_min >= 0.0:
        return Qs, 0.0

    ridge = abs(lam_min) + RIDGE_MARGIN
    Qr = Qs + ridge * np.eye(Qs.shape[0])
    if float(linalg.eigvalsh(Qr)[0]) < -RIDGE_MARGIN:
        raise NotConvex(f"Q remains indefinite after ridge {ridge:.3g}", ridge=ridge)
    logger.debug(f"Q had min eigenvalue {lam_min:.3g}, added ridge {ridge:.3g}")
    return Qr, ridge


def _independent_rows(A: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    """
    Indices of a maximal linearly independent subset of the rows of A.

    Uses QR with column pivoting on A^T. Raises Infeasible if the dropped rows
    contradict the kept ones.
    """
    p = A.shape[0]
    if p == 0:
        return ()
    _, R, piv = linalg.qr(A.T, mode='economic', pivoting=True)
    diag = np.abs(np.diag(R))
    scale = max(1.0, float(diag[0])) if diag.size else 1.0
    rank = int(np.sum(diag > RANK_THRESHOLD * scale))
    kept = tuple(sorted(int(i) for i in piv[:rank]))

    x0, *_ = linalg.lstsq(A, b) if rank else (np.zeros(A.shape[1]),)
    if _inf_norm(A @ x0 - b) > 1e-8 * (1.0 + _inf_norm(b)):
        raise Infeasible("equality constraints are inconsistent", rank=rank, rows=p)
    if rank < p:
        logger.debug(f"Dropped {p - rank} redundant equality rows")
    return kept


class _KktFactor:
    """One factorization of a square KKT matrix, reused across right-hand sides."""

    def __init__(self, K: np.ndarray):
        self.K = K
        self.lu = None
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            try:
                self.lu = linalg.lu_factor(K, check_finite=True)
            except (linalg.LinAlgWarning, linalg.LinAlgError, ValueError):
                self.lu = None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.lu is not None:
            return linalg.lu_solve(self.lu, rhs)
        sol, *_ = linalg.lstsq(self.K, rhs)
        return sol


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    """Largest alpha in (0, 1] keeping v + alpha * dv nonnegative."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _solve_equality_only(Q, q, A, b) -> Tuple[np.ndarray, np.ndarray]:
    n, p = Q.shape[0], A.shape[0]
    K = np.block([[Q, A.T], [A, np.zeros((p, p))]])
    rhs = np.concatenate([-q, b])
    sol = _KktFactor(K).solve(rhs)
    if _inf_norm(K @ sol - rhs) > 1e-8 * (1.0 + _inf_norm(rhs)):
        raise Infeasible("objective is unbounded below on the feasible set")
    return sol[:n], sol[n:]


def _polish(problem: QpProblem, Q: np.ndarray, A: np.ndarray, b: np.ndarray,
            x: np.ndarray, z: np.ndarray, s: np.ndarray, tol: float):
    """
    Re-solve the equality KKT system on the active set guessed from z versus s.

    Returns (x, lambda, nu) or None when the candidate is not an improvement.
    """
    G, h = problem.Gineq, problem.hineq
    n, p = problem.n, A.shape[0]
    active = np.flatnonzero(z > s)
    k = active.size
    Ga = G[active]
    K = np.block([
        [Q, Ga.T, A.T],
        [Ga, np.zeros((k, k)), np.zeros((k, p))],
        [A, np.zeros((p, k)), np.zeros((p, p))],
    ])
    rhs = np.concatenate([-problem.qvec, h[active], b])
    sol, *_ = linalg.lstsq(K, rhs)
    xp = sol[:n]
    lam_active = sol[n:n + k]
    if np.any(G @ xp - h > tol) or np.any(lam_active < -tol):
        return None
    lam = np.zeros(problem.m)
    lam[active] = np.maximum(lam_active, 0.0)
    return xp, lam, sol[n + k:]


def solve_qp(problem: QpProblem, tol: float = 1e-8, max_iter: int = 100, polish: bool = True) -> QpSolution:
    """
    Solve a convex QP with the primal-dual interior point method.

    Args:
        problem: Standard-form problem
        tol: Max-norm tolerance on every KKT residual family
        max_iter: Interior point iteration limit
        polish: Refine the result on the guessed active set

    Returns:
        QpSolution whose kkt_residual is at most tol

    Raises:
        Infeasible, NotConvex, IterationLimit
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n, m = problem.n, problem.m
    Q, ridge = _convexify(problem.Qmat)
    eq_rows = _independent_rows(problem.Aeq, problem.beq)
    A = problem.Aeq[list(eq_rows)] if eq_rows else np.zeros((0, n))
    b = problem.beq[list(eq_rows)] if eq_rows else np.zeros(0)
    p = A.shape[0]
    q, G, h = problem.qvec, problem.Gineq, problem.hineq

    def full_nu(y: np.ndarray) -> np.ndarray:
        nu = np.zeros(problem.p)
        if eq_rows:
            nu[list(eq_rows)] = y
        return nu

    def finish(x, lam, y, iterations, polished=False) -> QpSolution:
        nu = full_nu(y)
        residual = kkt_residual(problem, x, lam, nu, ridge).max
        return QpSolution(xstar=x, lambdastar=lam, nustar=nu, kkt_residual=residual,
                          iterations=iterations, ridge=ridge, eq_rows=eq_rows, polished=polished)

    if m == 0:
        x, y = _solve_equality_only(Q, q, A, b)
        return finish(x, np.zeros(0), y, 1)

    # Starting point from the regularized least-squares system
    start = _KktFactor(np.block([[Q + G.T @ G, A.T], [A, np.zeros((p, p))]]))
    sol = start.solve(np.concatenate([-q + G.T @ h, b]))
    x, y = sol[:n], sol[n:]
    s = np.maximum(h - G @ x, 1.0)
    z = np.ones(m)

    best = None
    for iteration in range(1, max_iter + 1):
        rd = Q @ x + q + G.T @ z + A.T @ y
        rp = A @ x - b
        ri = G @ x + s - h
        mu = float(s @ z) / m

        if max(_inf_norm(rd), _inf_norm(rp), _inf_norm(ri), float(np.max(s * z))) <= tol:
            candidate = finish(x, z.copy(), y, iteration)
            if candidate.kkt_residual <= tol:
                best = candidate
                break

        if not all(np.all(np.isfinite(v)) for v in (x, s, z, y)) or \
                _inf_norm(x) > DIVERGENCE_LIMIT or _inf_norm(z) > DIVERGENCE_LIMIT:
            raise Infeasible(f"interior point iterates diverged at iteration {iteration}")

        W = z / s
        factor = _KktFactor(np.block([[Q + G.T @ (W[:, None] * G), A.T], [A, np.zeros((p, p))]]))

        def newton(rc: np.ndarray):
            rhs = np.concatenate([-rd - G.T @ ((z * ri - rc) / s), -rp])
            step = factor.solve(rhs)
            dx, dy = step[:n], step[n:]
            dz = (z * ri - rc) / s + W * (G @ dx)
            ds = -ri - G @ dx
            return dx, ds, dz, dy

        # Predictor (affine scaling)
        dx_a, ds_a, dz_a, _ = newton(s * z)
        alpha_a = min(_max_step(s, ds_a), _max_step(z, dz_a))
        mu_aff = float((s + alpha_a * ds_a) @ (z + alpha_a * dz_a)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # Corrector
        dx, ds, dz, dy = newton(s * z + ds_a * dz_a - sigma * mu)
        alpha = min(1.0, STEP_FRACTION * min(_max_step(s, ds), _max_step(z, dz)))

        x = x + alpha * dx
        s = s + alpha * ds
        z = z + alpha * dz
        y = y + alpha * dy
    else:
        primal = max(_inf_norm(A @ x - b), _inf_norm(G @ x + s - h))
        if primal > np.sqrt(tol):
            raise Infeasible(f"no feasible point found in {max_iter} iterations", primal_residual=primal)
        if polish:
            refined = _polish(problem, Q, A, b, x, z, s, tol)
            if refined is not None:
                candidate = finish(*refined, max_iter, polished=True)
                if candidate.kkt_residual <= tol:
                    logger.debug("Iteration limit reached; polished solution accepted")
                    return candidate
        raise IterationLimit(f"interior point did not converge in {max_iter} iterations", primal_residual=primal)

    if polish:
        refined = _polish(problem, Q, A, b, x, z, s, tol)
        if refined is not None:
            candidate = finish(*refined, best.iterations, polished=True)
            if candidate.kkt_residual < best.kkt_residual:
                best = candidate

    logger.debug(f"QP n={n} m={m} p={p} solved in {best.iterations} iterations, "
                 f"residual {best.kkt_residual:.2e}{' (polished)' if best.polished else ''}")
    return best


def backward_qp(problem: QpProblem, solution: QpSolution, dL_dx: np.ndarray) -> QpGradients:
    """
    Gradients of a scalar loss with respect to (Q, q, G, h, A, b).

    Solves one linear system with the transposed KKT Jacobian at the optimum and
    contracts it with dL/dx. Gradients of redundant equality rows dropped during
    the solve are zero.

    Raises:
        StaleSolution: the solution does not satisfy the KKT conditions of problem
        SingularKkt: the Jacobian is singular and the system is inconsistent
    """
    n, m = problem.n, problem.m
    g = np.asarray(dL_dx, dtype=float).ravel()
    if g.shape[0] != n:
        raise DimensionMismatch(f"dL_dx has {g.shape[0]} entries, expected {n}")

    x, lam = solution.xstar, solution.lambdastar
    residual = kkt_residual(problem, x, lam, solution.nustar, solution.ridge).max
    if residual > BACKWARD_RESIDUAL_LIMIT:
        raise StaleSolution(f"KKT residual {residual:.3g} exceeds {BACKWARD_RESIDUAL_LIMIT}")

    rows = list(solution.eq_rows)
    A = problem.Aeq[rows] if rows else np.zeros((0, n))
    nu = solution.nustar[rows] if rows else np.zeros(0)
    p = A.shape[0]
    Q = _symmetric(problem.Qmat) + solution.ridge * np.eye(n)
    G = problem.Gineq
    slack = G @ x - problem.hineq

    diag = slack.copy()
    degenerate_rows = (np.abs(lam) < DEGENERATE_THRESHOLD) & (np.abs(slack) < DEGENERATE_THRESHOLD)
    degenerate = bool(np.any(degenerate_rows))
    if degenerate:
        diag[degenerate_rows] -= DEGENERATE_JITTER
        logger.debug(f"{int(degenerate_rows.sum())} weakly active constraints; gradients are approximate")

    K = np.block([
        [Q, G.T * lam[None, :], A.T],
        [G, np.diag(diag), np.zeros((m, p))],
        [A, np.zeros((p, m)), np.zeros((p, p))],
    ])
    rhs = np.concatenate([g, np.zeros(m + p)])

    if np.linalg.cond(K) > BACKWARD_COND_LIMIT:
        v, *_ = linalg.lstsq(K, rhs)
        if _inf_norm(K @ v - rhs) > 1e-8 * (1.0 + _inf_norm(rhs)):
            raise SingularKkt("KKT Jacobian is singular at the optimum")
    else:
        v = _KktFactor(K).solve(rhs)

    vx, vl, vn = v[:n], v[n:n + m], v[n + m:]
    dz = -vx
    dQ = 0.5 * (np.outer(dz, x) + np.outer(x, dz))
    dG = -(np.outer(lam, vx) + np.outer(lam * vl, x))
    dh = lam * vl

    dA = np.zeros_like(problem.Aeq)
    db = np.zeros(problem.p)
    if rows:
        dA[rows] = -(np.outer(nu, vx) + np.outer(vn, x))
        db[rows] = vn

    grads = QpGradients(dQ=dQ, dq=dz, dG=dG, dh=dh, dA=dA, db=db, degenerate=degenerate)
    if not all(np.all(np.isfinite(arr)) for arr in (dQ, dz, dG, dh, dA, db)):
        raise SingularKkt("backward pass produced non-finite gradients")
    return grads


def active_set_oracle(problem: QpProblem) -> QpSolution:
    """
    Exact optimum by enumerating every subset of active inequality constraints.

    Intended for small problems only (n <= 12, m <= 16).
    """
    n, m = problem.n, problem.m
    if n > ORACLE_MAX_VARIABLES or m > ORACLE_MAX_INEQUALITIES:
        raise TooLarge(f"active-set enumeration limited to n<={ORACLE_MAX_VARIABLES}, "
                       f"m<={ORACLE_MAX_INEQUALITIES}; got n={n}, m={m}")

    Q, ridge = _convexify(problem.Qmat)
    eq_rows = _independent_rows(problem.Aeq, problem.beq)
    A = problem.Aeq[list(eq_rows)] if eq_rows else np.zeros((0, n))
    b = problem.beq[list(eq_rows)] if eq_rows else np.zeros(0)
    p = A.shape[0]
    G, h, q = problem.Gineq, problem.hineq, problem.qvec

    best: Optional[Tuple[float, np.ndarray, np.ndarray, np.ndarray]] = None
    examined = 0
    for size in range(m + 1):
        for subset in itertools.combinations(range(m), size):
            examined += 1
            idx = list(subset)
            Ga = G[idx]
            k = len(idx)
            K = np.block([
                [Q, Ga.T, A.T],
                [Ga, np.zeros((k, k)), np.zeros((k, p))],
                [A, np.zeros((p, k)), np.zeros((p, p))],
            ])
            rhs = np.concatenate([-q, h[idx], b])
            sol, *_ = linalg.lstsq(K, rhs)
            if _inf_norm(K @ sol - rhs) > ORACLE_TOL * (1.0 + _inf_norm(rhs)):
                continue
            x = sol[:n]
            lam_active = sol[n:n + k]
            if np.any(G @ x - h > ORACLE_TOL) or np.any(lam_active < -ORACLE_TOL):
                continue
            value = float(0.5 * x @ Q @ x + q @ x)
            if best is None or value < best[0] - 1e-12:
                lam = np.zeros(m)
                lam[idx] = np.maximum(lam_active, 0.0)
                best = (value, x, lam, sol[n + k:])

    if best is None:
        raise Infeasible("no active set yields a feasible KKT point")

    _, x, lam, y = best
    nu = np.zeros(problem.p)
    if eq_rows:
        nu[list(eq_rows)] = y
    return QpSolution(xstar=x, lambdastar=lam, nustar=nu,
                      kkt_residual=kkt_residual(problem, x, lam, nu, ridge).max,
                      iterations=examined, ridge=ridge, eq_rows=eq_rows)


def dump_problem(problem: QpProblem) -> str:
    """Plain-text matrix blocks describing a problem, for bug reports."""
    blocks = [f"QpProblem n={problem.n} m={problem.m} p={problem.p}"]
    with np.printoptions(precision=17, suppress=False, linewidth=200, threshold=100000):
        for name, value in (("Q", problem.Qmat), ("q", problem.qvec), ("G", problem.Gineq),
                            ("h", problem.hineq), ("A", problem.Aeq), ("b", problem.beq)):
            blocks.append(f"[{name}] shape={value.shape}")
            blocks.append(np.array2string(value) if value.size else "(empty)")
    return "\n".join(blocks) + "\n"
