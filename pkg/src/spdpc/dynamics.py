"""Discrete-time stochastic linear system and closed-loop rollouts.

The plant is x' = A x + B u + w with additive disturbance w.  Rollouts run
in two modes:

  * ``full-horizon``: the policy sees (x0, xi) once and emits the whole
    action sequence, which is then applied open loop.
  * ``state-feedback``: the policy is evaluated on the current state at
    every step.

Rollout arithmetic goes through the autodiff ops, so the same code path is
eager (plain arrays in, plain arrays out) or differentiable end to end when
the policy closure produces tape tensors.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import policy as pol

FULL_HORIZON = "full-horizon"
STATE_FEEDBACK = "state-feedback"
MODES = (FULL_HORIZON, STATE_FEEDBACK)


@dataclass
class LinearSystem:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.ndim != 2 or self.B.shape[0] != self.A.shape[0]:
            raise ValueError(f"B must be ({self.A.shape[0]}, n_u), got {self.B.shape}")
        rank = controllability_rank(self.A, self.B)
        if rank < self.n_x:
            warnings.warn(
                f"(A, B) pair is not controllable: rank {rank} < {self.n_x}",
                stacklevel=2,
            )

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]


def controllability_rank(A, B) -> int:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    blocks, block = [], B
    for _ in range(A.shape[0]):
        blocks.append(block)
        block = A @ block
    return int(np.linalg.matrix_rank(np.hstack(blocks)))


def load_model(path) -> LinearSystem:
    """Read a model fixture: JSON with dense "A" and "B" matrices."""
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return LinearSystem(np.asarray(doc["A"]), np.asarray(doc["B"]))
    except KeyError as exc:
        raise ValueError(f"model fixture {path} is missing key {exc}") from None


@dataclass
class NoiseSpec:
    """Additive disturbance distribution with an optional infinity-norm bound.

    ``scale`` is the per-dimension standard deviation (gaussian) or
    half-width (uniform).  Gaussian noise defaults to truncation at
    4 * max(scale); pass ``bound=None`` explicitly to disable.
    """

    kind: str
    scale: np.ndarray
    bound: float | None = "default"  # sentinel resolved in __post_init__

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform", "zero"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        self.scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float64))
        if np.any(self.scale < 0):
            raise ValueError("noise scale must be non-negative")
        if self.bound == "default":
            self.bound = 4.0 * float(self.scale.max()) if self.kind == "gaussian" else None
        if self.bound is not None:
            self.bound = float(self.bound)
            if self.bound <= 0 and self.kind != "zero":
                raise ValueError(f"noise bound must be positive, got {self.bound}")

    @property
    def dim(self) -> int:
        return self.scale.size

    def draw(self, gen: np.random.Generator, steps: int) -> np.ndarray:
        """Sample a (steps, dim) disturbance sequence."""
        size = (steps, self.dim)
        if self.kind == "zero":
            return np.zeros(size)
        if self.kind == "gaussian":
            w = gen.normal(0.0, 1.0, size=size) * self.scale
        else:
            w = gen.uniform(-1.0, 1.0, size=size) * self.scale
        if self.bound is not None:
            w = np.clip(w, -self.bound, self.bound)
        return w


@dataclass
class Trajectory:
    """One realized rollout: states (N+1, n_x), actions (N, n_u), noise (N, n_x)."""

    states: np.ndarray
    actions: np.ndarray
    noise: np.ndarray
    scenario: tuple[int, int] = (0, 0)  # (parametric index i, disturbance index j)
    xi: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def reconstruction_residual(self, model: LinearSystem) -> float:
        """Max abs mismatch when replaying stored actions and noise."""
        worst = 0.0
        for k in range(self.horizon):
            pred = model.A @ self.states[k] + model.B @ self.actions[k] + self.noise[k]
            worst = max(worst, float(np.abs(self.states[k + 1] - pred).max()))
        return worst


def step(model: LinearSystem, x, u, omega):
    """One plant update; differentiable in x and u.

    Accepts single vectors ((n_x,), (n_u,)) or batches ((b, n_x), (b, n_u)).
    """
    xv = ad.as_tensor(x)
    if xv.values.ndim == 2:
        out = ad.add(ad.matmul(xv, model.A.T), ad.matmul(u, model.B.T))
    else:
        out = ad.add(ad.matmul(model.A, xv), ad.matmul(model.B, u))
    return ad.add(out, omega)


def rollout_tensors(model, policy_fn, x0, xi, omega, mode, n_u):
    """Roll the closed loop over a batch; returns per-step tensors.

    ``policy_fn`` maps a (b, d) tensor to actions: in full-horizon mode one
    call produces the flat (b, N * n_u) plan, in state-feedback mode it is
    called on the state at every step.  ``omega`` is (b, N, n_x).

    Returns (states, actions): lists of (b, n_x) / (b, n_u) tensors of
    length N+1 and N.
    """
    if mode not in MODES:
        raise ValueError(f"unknown rollout mode {mode!r}")
    x0 = np.asarray(x0, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    horizon = omega.shape[1]
    states = [ad.as_tensor(x0)]
    actions = []
    if mode == FULL_HORIZON:
        z = states[0]
        if xi is not None and np.asarray(xi).size:
            z = ad.concat([states[0], np.asarray(xi, dtype=np.float64)], axis=1)
        plan = policy_fn(z)
        if plan.values.shape[1] != horizon * n_u:
            raise ValueError(
                f"policy emits width {plan.values.shape[1]}, "
                f"horizon wants {horizon} * {n_u}"
            )
        for k in range(horizon):
            u = ad.narrow(plan, 1, k * n_u, (k + 1) * n_u)
            actions.append(u)
            states.append(step(model, states[k], u, omega[:, k, :]))
    else:
        for k in range(horizon):
            u = policy_fn(states[k])
            actions.append(u)
            states.append(step(model, states[k], u, omega[:, k, :]))
    return states, actions


def rollout(model, policy, mode, x0, xi, omega, scenario=(0, 0)) -> Trajectory:
    """Single-scenario closed-loop rollout (eager)."""
    omega = np.asarray(omega, dtype=np.float64)
    xi_arr = None if xi is None else np.atleast_2d(np.asarray(xi, dtype=np.float64))
    states, actions = rollout_tensors(
        model,
        lambda z: ad.as_tensor(pol.apply_layers(policy.layers, z)),
        np.atleast_2d(np.asarray(x0, dtype=np.float64)),
        xi_arr,
        omega[None, :, :],
        mode,
        model.n_u,
    )
    return Trajectory(
        states=np.stack([s.values[0] for s in states]),
        actions=np.stack([a.values[0] for a in actions]),
        noise=omega,
        scenario=tuple(scenario),
        xi=np.zeros(0) if xi is None else np.asarray(xi, dtype=np.float64),
    )


def rollout_open_loop(model, x0, actions, omega) -> Trajectory:
    """Apply a fixed action sequence; useful for superposition checks and solvers."""
    actions = np.asarray(actions, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    states = [np.asarray(x0, dtype=np.float64)]
    for k in range(actions.shape[0]):
        states.append(model.A @ states[k] + model.B @ actions[k] + omega[k])
    return Trajectory(np.stack(states), actions.copy(), omega.copy())


def simulate_receding_horizon(model, policy, mode, x0, xi, noise_fn, steps: int):
    """Closed-loop run for ``steps`` plant updates with per-step re-planning.

    In full-horizon mode the policy plans from the current state each step
    and only the first action is applied; in state-feedback mode the policy
    output is the action.  ``noise_fn(k)`` supplies the disturbance of step
    k, so callers control seeding.  ``xi`` may be a fixed vector (or None)
    or a callable k -> vector for time-varying parameters.

    Returns (states (steps+1, n_x), actions (steps, n_u)).
    """
    if mode not in MODES:
        raise ValueError(f"unknown rollout mode {mode!r}")
    x = np.asarray(x0, dtype=np.float64)
    states, actions = [x], []
    for k in range(steps):
        xi_k = xi(k) if callable(xi) else xi
        if mode == FULL_HORIZON:
            u = pol.action_sequence(policy, x, xi_k, model.n_u)[0]
        else:
            u = pol.forward(policy, x)
        x = model.A @ x + model.B @ u + np.asarray(noise_fn(k), dtype=np.float64)
        actions.append(u)
        states.append(x)
    return np.stack(states), np.stack(actions)
