"""Online optimization baseline and the policy-vs-solver timing benchmark.

The baseline solves the deterministic penalized control problem at a given
initial state by gradient descent on the open-loop action sequence, using
the same tape and loss as training (batch of one, disturbances off).  A
backtracking line search keeps the objective non-increasing, and a shifted
previous solution warm-starts the next receding-horizon step.

The benchmark times one decision of each method on the same instances:
a single policy forward pass against a single warm-started solve.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import dynamics as dyn
from . import objectives as obj
from . import policy as pol


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 500
    tol: float = 1e-8           # stop when the gradient infinity norm drops below
    step0: float = 1.0
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40

    def __post_init__(self):
        if self.max_iters < 1 or self.max_backtracks < 1:
            raise ValueError("iteration budgets must be >= 1")
        if not 0 < self.backtrack < 1:
            raise ValueError(f"backtrack factor must sit in (0, 1), got {self.backtrack}")
        if self.step0 <= 0 or self.tol < 0 or self.armijo_c <= 0:
            raise ValueError("step0 and armijo_c must be positive, tol non-negative")


@dataclass
class SolveResult:
    actions: np.ndarray          # (N, n_u)
    value: float
    iterations: int
    converged: bool
    values: list = field(default_factory=list)  # objective after each accepted step


def _loss_parts(model, x0, xi, plan, objective, constraints, weights, horizon):
    states, actions = dyn.rollout_tensors(
        model, lambda z: ad.as_tensor(plan), x0, xi,
        np.zeros((1, horizon, model.n_x)), dyn.FULL_HORIZON, model.n_u)
    return obj.total_loss(states, actions, xi, objective, constraints, weights)


def objective_value(model, x0, xi, u, objective, constraints, weights) -> float:
    """Penalized open-loop cost of action sequence ``u`` (N, n_u) from ``x0``."""
    u = np.asarray(u, dtype=np.float64)
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    xi = None if xi is None else np.atleast_2d(np.asarray(xi, dtype=np.float64))
    horizon = u.shape[0]
    parts = _loss_parts(model, x0, xi, u.reshape(1, -1), objective, constraints,
                        weights, horizon)
    return parts.total.item()


def solve(model, x0, xi, horizon, objective, constraints, weights,
          cfg: SolverConfig = SolverConfig(), warm_start=None) -> SolveResult:
    """Descend the penalized objective from ``warm_start`` (zeros if absent)."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    xi = None if xi is None else np.atleast_2d(np.asarray(xi, dtype=np.float64))
    if warm_start is None:
        u = np.zeros((horizon, model.n_u))
    else:
        u = np.array(warm_start, dtype=np.float64).reshape(horizon, model.n_u)

    def value_at(u_mat) -> float:
        return _loss_parts(model, x0, xi, u_mat.reshape(1, -1), objective,
                           constraints, weights, horizon).total.item()

    result = SolveResult(actions=u, value=value_at(u), iterations=0, converged=False)
    result.values.append(result.value)
    trial = cfg.step0
    for it in range(cfg.max_iters):
        tape = ad.Tape()
        plan = tape.param(u.reshape(1, -1))
        parts = _loss_parts(model, x0, xi, plan, objective, constraints,
                            weights, horizon)
        grad = tape.backward(parts.total)[plan.node].reshape(horizon, model.n_u)
        f0 = parts.total.item()
        gnorm2 = float(np.sum(grad * grad))
        if np.sqrt(gnorm2) == 0.0 or np.max(np.abs(grad)) <= cfg.tol:
            result.converged = True
            break
        step = trial
        accepted = False
        for _ in range(cfg.max_backtracks):
            candidate = u - step * grad
            f_new = value_at(candidate)
            if f_new <= f0 - cfg.armijo_c * step * gnorm2:
                u = candidate
                result.values.append(f_new)
                accepted = True
                break
            step *= cfg.backtrack
        result.iterations = it + 1
        if not accepted:
            break  # no productive step at the smallest trial size
        # seed the next search just above the accepted step so the step
        # length tracks the local curvature instead of re-shrinking from step0
        trial = step * 2.0
    result.actions = u
    result.value = result.values[-1]
    return result


def shift_warm_start(actions: np.ndarray) -> np.ndarray:
    """Drop the executed first action, repeat the last one."""
    actions = np.asarray(actions, dtype=np.float64)
    return np.concatenate([actions[1:], actions[-1:]], axis=0)


# ---------------------------------------------------------------------------
# timing

BENCHMARK_COLUMNS = ("instance", "policy_ns_mean", "policy_ns_max",
                     "baseline_ns_mean", "baseline_ns_max", "ratio")


@dataclass
class BenchmarkRow:
    instance: int
    policy_ns_mean: float
    policy_ns_max: int
    baseline_ns_mean: float
    baseline_ns_max: int
    ratio: float


def _time_ns(fn, repeats: int):
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return float(np.mean(samples)), int(np.max(samples))


def benchmark(policy, model, instances, horizon, objective, constraints,
              weights, cfg: SolverConfig = SolverConfig(), repeats: int = 5):
    """Time one policy decision against one warm-started solve per instance.

    ``instances`` is a list of (x0, xi-or-None).  The solver for instance t
    warm starts from the shifted solution of instance t-1, matching how it
    would run inside a receding-horizon loop.
    """
    rows = []
    prev = None
    for t, (x0, xi) in enumerate(instances):
        pol.forward(policy, np.asarray(x0, dtype=np.float64),
                    None if xi is None else np.asarray(xi, dtype=np.float64))
        p_mean, p_max = _time_ns(
            lambda: pol.forward(policy, np.asarray(x0, dtype=np.float64),
                                None if xi is None else np.asarray(xi, dtype=np.float64)),
            repeats)
        warm = None if prev is None else shift_warm_start(prev)
        b_mean, b_max = _time_ns(
            lambda: solve(model, x0, xi, horizon, objective, constraints,
                          weights, cfg, warm_start=warm),
            repeats)
        prev = solve(model, x0, xi, horizon, objective, constraints, weights,
                     cfg, warm_start=warm).actions
        rows.append(BenchmarkRow(
            instance=t, policy_ns_mean=p_mean, policy_ns_max=p_max,
            baseline_ns_mean=b_mean, baseline_ns_max=b_max,
            ratio=b_mean / p_mean))
    return rows


def save_benchmark(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCHMARK_COLUMNS)
        for row in rows:
            writer.writerow([row.instance, repr(row.policy_ns_mean),
                             row.policy_ns_max, repr(row.baseline_ns_mean),
                             row.baseline_ns_max, repr(row.ratio)])
