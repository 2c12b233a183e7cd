"""
Finite-difference gradient checks.

Two suites compare analytic gradients against central differences:

  qp          backward_qp on planted QPs with a known, strictly complementary
              optimum, for every problem datum
  end_to_end  the full matching network (encoder, GCN, affinities, QP layer,
              softmax, loss) for every trainable parameter and every input
              feature, on random small frame pairs

Relative error is |a - f| / max(|a|, |f|, floor). Instances whose QP optimum is
not strictly complementary, or whose scores hit the loss clamp, are skipped
because the loss is not differentiable there.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .matching_net import FramePairSample, MatchingNetwork, build_forward, loss_and_gradients
from ..config.settings import MatchingConfig
from ..solvers.graph_matching import matching_problem
from ..solvers.qp_solver import QpProblem, backward_qp, solve_qp
from ..solvers.scoring import CLAMP_HIGH, CLAMP_LOW
from ..utils.helpers import max_relative_error
from ..utils.logging_config import PerformanceTimer, get_logger

logger = get_logger(__name__)

DEFAULT_THRESHOLD = 1e-3
QP_STEP = 1e-5
QP_FLOOR = 1e-4
NETWORK_STEP = 1e-4
NETWORK_FLOOR = 1e-3
QP_INSTANCES = 50
END_TO_END_INSTANCES = 20
END_TO_END_SHAPE = (3, 3)
COMPLEMENTARITY_MARGIN = 1e-6
GRADCHECK_TEMPERATURE = 1e-3
FEATURE_SPREAD = 0.2
QP_DATA = ("Qmat", "qvec", "Gineq", "hineq", "Aeq", "beq")


@dataclass
class SuiteResult:
    name: str
    threshold: float
    max_relative_error: float = 0.0
    instances: int = 0
    skipped: int = 0
    entries: int = 0
    worst: str = ""

    @property
    def passed(self) -> bool:
        return self.instances > 0 and self.max_relative_error <= self.threshold

    def record(self, label: str, error: float, entries: int) -> None:
        self.entries += entries
        if error >= self.max_relative_error:
            self.max_relative_error = error
            self.worst = label

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return (f"suite={self.name} instances={self.instances} skipped={self.skipped} "
                f"entries={self.entries} max_rel_err={self.max_relative_error:.3e} "
                f"threshold={self.threshold:.0e} worst={self.worst or '-'} status={status}")


@dataclass
class GradcheckReport:
    suites: List[SuiteResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.suites) and all(s.passed for s in self.suites)

    def lines(self) -> List[str]:
        return [s.line() for s in self.suites]

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        return {s.name: {"max_relative_error": s.max_relative_error, "instances": s.instances,
                         "skipped": s.skipped, "entries": s.entries, "passed": s.passed}
                for s in self.suites}


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    """Entry-wise central difference of scalar f at x."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        original = x[idx]
        x[idx] = original + step
        plus = f(x)
        x[idx] = original - step
        minus = f(x)
        x[idx] = original
        grad[idx] = (plus - minus) / (2.0 * step)
    return grad


# QP suite -------------------------------------------------------------------

def planted_qp(rng: np.random.Generator, n: int = 5, m: int = 3, p: int = 1,
               n_active: int = 2) -> Tuple[QpProblem, np.ndarray]:
    """QP built backwards from a chosen optimum, active set and positive multipliers."""
    L = rng.normal(size=(n, n))
    Q = L @ L.T + 0.5 * np.eye(n)
    x_star = rng.normal(size=n)
    G = rng.normal(size=(m, n))
    active = np.arange(m) < n_active
    slack = np.where(active, 0.0, rng.uniform(0.2, 1.0, size=m))
    lam = np.where(active, rng.uniform(0.2, 1.0, size=m), 0.0)
    A = rng.normal(size=(p, n))
    nu = rng.normal(size=p)
    q = -(Q @ x_star + G.T @ lam + A.T @ nu)
    return QpProblem.create(Q, q, G, G @ x_star + slack, A, A @ x_star), x_star


def strictly_complementary(problem: QpProblem, x: np.ndarray, lam: np.ndarray,
                           margin: float = COMPLEMENTARITY_MARGIN) -> bool:
    """Every inequality is either clearly active with a positive multiplier or clearly slack."""
    slack = problem.hineq - problem.Gineq @ x
    return bool(np.all((slack > margin) ^ (lam > margin)))


def check_qp_instance(problem: QpProblem, rng: np.random.Generator, step: float = QP_STEP,
                      tol: float = 1e-10) -> Optional[Dict[str, float]]:
    """Per-datum relative errors of backward_qp, or None when the optimum is degenerate."""
    solution = solve_qp(problem, tol=tol)
    if not strictly_complementary(problem, solution.xstar, solution.lambdastar):
        return None
    g = rng.normal(size=problem.n)
    grads = backward_qp(problem, solution, g)
    analytic = {"Qmat": grads.dQ, "qvec": grads.dq, "Gineq": grads.dG,
                "hineq": grads.dh, "Aeq": grads.dA, "beq": grads.db}

    errors = {}
    for name in QP_DATA:
        def loss(value, name=name):
            data = {k: getattr(problem, k) for k in QP_DATA}
            data[name] = value
            return float(g @ solve_qp(QpProblem(**data), tol=tol).xstar)

        if getattr(problem, name).size:
            fd = central_difference(loss, getattr(problem, name), step)
            errors[name] = max_relative_error(analytic[name], fd, QP_FLOOR)
    return errors


def run_qp_suite(seed: int, instances: int = 5, threshold: float = DEFAULT_THRESHOLD) -> SuiteResult:
    rng = np.random.default_rng(seed)
    result = SuiteResult("qp", threshold)
    for k in range(instances):
        problem, _ = planted_qp(rng)
        errors = check_qp_instance(problem, rng)
        if errors is None:
            result.skipped += 1
            continue
        result.instances += 1
        for name, error in errors.items():
            result.record(f"{name}#{k}", error, getattr(problem, name).size)
    return result


# End-to-end suite -------------------------------------------------------------

def random_boxes(rng: np.random.Generator, count: int, anchor: Optional[np.ndarray] = None) -> np.ndarray:
    """Center-form boxes; with an anchor, jittered copies of its rows."""
    if anchor is not None:
        base = anchor[rng.integers(0, len(anchor), size=count)]
        return base + np.column_stack([rng.normal(0, 3, (count, 2)), rng.normal(0, 1, (count, 2))])
    return np.column_stack([rng.uniform(20, 80, (count, 2)), rng.uniform(10, 20, (count, 2))])


def random_sample(rng: np.random.Generator, n_d: int, n_t: int, d: int, max_history: int = 2,
                  spread: float = FEATURE_SPREAD) -> FramePairSample:
    """
    Frame pair whose raw features scatter around one shared vector.

    A small spread keeps the relaxed score map near uniform, so the sharpened
    scores stay off the loss clamp even at low temperature.
    """
    base = rng.normal(size=d)
    det_boxes = random_boxes(rng, n_d)
    labels = np.zeros((n_d, n_t))
    for i, j in enumerate(rng.permutation(n_t)[:n_d]):
        labels[i, j] = 1.0
    return FramePairSample(
        det_features=base + spread * rng.normal(size=(n_d, d)),
        det_boxes=det_boxes,
        track_histories=tuple(base + spread * rng.normal(size=(int(rng.integers(1, max_history + 1)), d))
                              for _ in range(n_t)),
        track_boxes=random_boxes(rng, n_t, det_boxes),
        labels=labels,
    )


def _differentiable_at(network: MatchingNetwork, sample: FramePairSample,
                       config: MatchingConfig, temperature: float) -> bool:
    trace = build_forward(network, sample, config, temperature)
    y_hat = trace.y_hat.value
    if np.any(y_hat <= CLAMP_LOW) or np.any(y_hat >= CLAMP_HIGH):
        return False
    problem = matching_problem(trace.B.value, trace.M.value)
    solution = solve_qp(problem, tol=config.tol, polish=config.polish)
    return strictly_complementary(problem, solution.xstar, solution.lambdastar)


def check_network_instance(network: MatchingNetwork, sample: FramePairSample,
                           config: Optional[MatchingConfig] = None,
                           temperature: float = GRADCHECK_TEMPERATURE,
                           step: float = NETWORK_STEP) -> Optional[Dict[str, float]]:
    """Relative errors per parameter and per input, or None at a non-differentiable point."""
    config = config or MatchingConfig(tol=1e-10)
    if not _differentiable_at(network, sample, config, temperature):
        return None
    _, grads, trace = loss_and_gradients(network, sample, config, temperature)
    params = network.parameters()
    errors = {}

    for name, value in params.items():
        def loss(v, name=name):
            perturbed = network.with_parameters({**params, name: v})
            return float(build_forward(perturbed, sample, config, temperature).loss.value)
        errors[name] = max_relative_error(grads[name], central_difference(loss, value, step), NETWORK_FLOOR)

    def det_loss(v):
        return float(build_forward(network, replace(sample, det_features=v), config, temperature).loss.value)

    def history_loss(v):
        splits = np.cumsum([h.shape[0] for h in sample.track_histories])[:-1]
        perturbed = replace(sample, track_histories=tuple(np.split(v, splits)))
        return float(build_forward(network, perturbed, config, temperature).loss.value)

    stacked = np.vstack(sample.track_histories)
    errors["det_features"] = max_relative_error(
        trace.det_input.grad, central_difference(det_loss, sample.det_features, step), NETWORK_FLOOR)
    errors["track_histories"] = max_relative_error(
        trace.history_input.grad, central_difference(history_loss, stacked, step), NETWORK_FLOOR)
    return errors


def run_end_to_end_suite(seed: int, instances: int = 3, threshold: float = DEFAULT_THRESHOLD,
                         max_attempts: int = 20, shape: Optional[Tuple[int, int]] = None) -> SuiteResult:
    """
    Finite-difference check of the full loss on random networks and frame pairs.

    Instances at a non-differentiable point are skipped and do not count
    towards `instances`; shape fixes (n_d, n_t), otherwise both are drawn from 2..3.
    """
    rng = np.random.default_rng(seed)
    result = SuiteResult("end_to_end", threshold)
    attempts = 0
    while result.instances < instances and attempts < max_attempts:
        attempts += 1
        n_d, n_t = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        if shape is not None:
            n_d, n_t = shape
        d = int(rng.integers(3, 6))
        network = MatchingNetwork.create(d, hidden_width=5, output_width=4, seed=int(rng.integers(1 << 31)))
        sample = random_sample(rng, n_d, n_t, d)
        errors = check_network_instance(network, sample)
        if errors is None:
            result.skipped += 1
            continue
        result.instances += 1
        sizes = {name: value.size for name, value in network.parameters().items()}
        sizes["det_features"] = sample.det_features.size
        sizes["track_histories"] = sum(h.size for h in sample.track_histories)
        for name, error in errors.items():
            result.record(f"{name}#{attempts}", error, sizes[name])
    return result


def run_all(seed: int = 0, threshold: float = DEFAULT_THRESHOLD) -> GradcheckReport:
    """Run both suites from one seed."""
    with PerformanceTimer(f"gradient check (seed {seed})", logger):
        report = GradcheckReport([run_qp_suite(seed, QP_INSTANCES, threshold),
                                  run_end_to_end_suite(seed, END_TO_END_INSTANCES, threshold,
                                                       max_attempts=10 * END_TO_END_INSTANCES,
                                                       shape=END_TO_END_SHAPE)])
    for line in report.lines():
        logger.info(line)
    return report
