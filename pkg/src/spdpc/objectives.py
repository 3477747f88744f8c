"""Control objectives and soft-constraint penalties.

The training loss over a batch of rollouts is

    J = (1 / (batch * N)) * sum over rollouts of
        [ sum_k (stage cost + state penalty + input penalty) + terminal term ]

with ReLU-squared penalties standing in for the hard constraints during
training.  Everything is built from autodiff ops, so a loss evaluated on
eager arrays (monitoring, certification) and one evaluated on a tape
(training) share the same arithmetic.

Objective kinds:
  * ``stabilization``: quadratic state + action cost.
  * ``tracking``: quadratic distance to a reference + action cost.
  * ``split-tracking``: track selected state components, damp the rest.
  * ``terminal-smoothing``: reach a target state at the end of the horizon
    with smooth state/action increments (replaces the per-stage form).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

OBJECTIVE_KINDS = ("stabilization", "tracking", "split-tracking", "terminal-smoothing")

WEIGHT_FIELDS = ("Q_r", "Q_u", "Q_x", "Q_h", "Q_g", "Q_f", "Q_c", "Q_du", "Q_dx")


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights; unused entries stay at zero.

    Q_r tracking, Q_u action effort, Q_x state magnitude, Q_h state-constraint
    penalty, Q_g action-constraint penalty, Q_f terminal, Q_c contraction,
    Q_du action smoothing, Q_dx state smoothing.
    """

    Q_r: float = 0.0
    Q_u: float = 0.0
    Q_x: float = 0.0
    Q_h: float = 0.0
    Q_g: float = 0.0
    Q_f: float = 0.0
    Q_c: float = 0.0
    Q_du: float = 0.0
    Q_dx: float = 0.0

    def __post_init__(self):
        for name in WEIGHT_FIELDS:
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0.0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)


# ---------------------------------------------------------------------------
# per-scenario value references

@dataclass(frozen=True)
class Constant:
    """A fixed vector shared by every scenario."""

    values: tuple

    def resolve(self, xi, batch: int) -> np.ndarray:
        v = np.asarray(self.values, dtype=np.float64)
        return np.broadcast_to(v, (batch, v.size))


@dataclass(frozen=True)
class XiSlice:
    """Columns [start, stop) of the scenario parameter vector."""

    start: int
    stop: int

    def resolve(self, xi, batch: int) -> np.ndarray:
        if xi is None or np.asarray(xi).shape[-1] < self.stop:
            raise ValueError(
                f"parameter vector too short for columns [{self.start}:{self.stop})"
            )
        return np.asarray(xi, dtype=np.float64)[:, self.start:self.stop]


# ---------------------------------------------------------------------------
# constraints

def _check_margin(margin) -> float:
    margin = float(margin)
    if not np.isfinite(margin) or margin < 0.0:
        raise ValueError(f"margin must be finite and >= 0, got {margin}")
    return margin


@dataclass(frozen=True)
class BoxConstraint:
    """lower <= v <= upper, encoded as residuals (v - upper, lower - v).

    ``margin`` tightens the training penalty by that amount without moving
    the constraint itself, so rollouts keep headroom against noise; checks
    of the true constraint go through ``residuals`` and never see it.
    """

    lower: tuple
    upper: tuple
    margin: float = 0.0

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != hi.shape:
            raise ValueError(f"box bounds differ in shape: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ValueError("box has lower > upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "margin", _check_margin(self.margin))

    def residuals(self, v, xi=None):
        axis = 1 if ad.as_tensor(v).values.ndim == 2 else 0
        return ad.concat([ad.subtract(v, self.upper), ad.subtract(self.lower, v)], axis=axis)


@dataclass(frozen=True)
class EllipseKeepOut:
    """Keep the state outside a parametric ellipse in the first two components.

    residual = radius^2 - shape * (x1 - center_x)^2 - (x2 - center_y)^2;
    non-positive residual means the state is clear of the obstacle.
    ``margin`` inflates the penalty (in squared-distance units) the same
    way as for ``BoxConstraint``.
    """

    radius: Constant | XiSlice
    shape: Constant | XiSlice
    center_x: Constant | XiSlice
    center_y: Constant | XiSlice
    margin: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "margin", _check_margin(self.margin))

    def residuals(self, x, xi=None):
        xv = ad.as_tensor(x)
        if xv.values.ndim != 2:
            raise ValueError("keep-out residuals expect a (batch, n_x) state block")
        batch = xv.values.shape[0]
        radius = self.radius.resolve(xi, batch)
        shape = self.shape.resolve(xi, batch)
        cx = self.center_x.resolve(xi, batch)
        cy = self.center_y.resolve(xi, batch)
        x1 = ad.narrow(xv, 1, 0, 1)
        x2 = ad.narrow(xv, 1, 1, 2)
        return ad.subtract(
            ad.subtract(radius * radius, ad.multiply(shape, ad.square(ad.subtract(x1, cx)))),
            ad.square(ad.subtract(x2, cy)),
        )


@dataclass(frozen=True)
class ContractionConstraint:
    """||x_next|| <= rate * ||x||: pulls successive states toward the origin."""

    rate: float

    def __post_init__(self):
        if not 0.0 < self.rate:
            raise ValueError(f"contraction rate must be positive, got {self.rate}")


@dataclass
class ConstraintSet:
    state: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    contraction: ContractionConstraint | None = None
    terminal_box: BoxConstraint | None = None


# ---------------------------------------------------------------------------
# penalties

def penalty(residual, weight: float, margin: float = 0.0):
    """weight * sum relu(residual + margin)^2; zero iff every residual <= -margin."""
    if margin:
        residual = ad.add(residual, margin)
    return ad.scale(ad.reduce_sum(ad.square(ad.relu(residual))), weight)


def state_penalty(constraints: ConstraintSet, x, xi, weight: float):
    total = ad.as_tensor(0.0)
    for c in constraints.state:
        total = ad.add(total, penalty(c.residuals(x, xi), weight, c.margin))
    return total


def input_penalty(constraints: ConstraintSet, u, xi, weight: float):
    total = ad.as_tensor(0.0)
    for c in constraints.inputs:
        total = ad.add(total, penalty(c.residuals(u, xi), weight, c.margin))
    return total


def contraction_penalty(x, x_next, rate: float, weight: float):
    gap = ad.subtract(ad.l2norm(x_next), ad.scale(ad.l2norm(x), rate))
    return ad.scale(ad.reduce_sum(ad.square(ad.relu(gap))), weight)


# ---------------------------------------------------------------------------
# objectives

@dataclass(frozen=True)
class StageObjective:
    kind: str
    track_indices: tuple = ()            # split-tracking: which components form y
    reference: Constant | XiSlice | None = None  # tracking / split-tracking
    target: Constant | XiSlice | None = None     # terminal-smoothing end state

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.kind == "tracking" and self.reference is None:
            raise ValueError("tracking objective needs a reference")
        if self.kind == "split-tracking" and (not self.track_indices or self.reference is None):
            raise ValueError("split-tracking needs track_indices and a reference")
        if self.kind == "terminal-smoothing" and self.target is None:
            raise ValueError("terminal-smoothing needs a target")
        object.__setattr__(self, "track_indices", tuple(int(i) for i in self.track_indices))


def _split_columns(x, indices, n_cols):
    """Return (selected, remaining) column groups as tensors."""
    picked = sorted(indices)
    selected = ad.concat([ad.narrow(x, 1, i, i + 1) for i in picked], axis=1)
    rest_cols = [i for i in range(n_cols) if i not in picked]
    if not rest_cols:
        return selected, None
    # group contiguous runs to keep the tape short
    runs, start = [], rest_cols[0]
    prev = start
    for c in rest_cols[1:]:
        if c != prev + 1:
            runs.append((start, prev + 1))
            start = c
        prev = c
    runs.append((start, prev + 1))
    rest = ad.concat([ad.narrow(x, 1, a, b) for a, b in runs], axis=1)
    return selected, rest


def stage_cost(objective: StageObjective, weights: LossWeights, x, u, xi=None):
    """Per-step cost summed over the batch dimension."""
    xv, uv = ad.as_tensor(x), ad.as_tensor(u)
    if xv.values.ndim == 1:
        raise ValueError("stage_cost expects batched (b, n) inputs")
    batch = xv.values.shape[0]
    if objective.kind == "stabilization":
        return ad.add(
            ad.scale(ad.reduce_sum(ad.square(xv)), weights.Q_x),
            ad.scale(ad.reduce_sum(ad.square(uv)), weights.Q_u),
        )
    if objective.kind == "tracking":
        ref = objective.reference.resolve(xi, batch)
        return ad.add(
            ad.scale(ad.reduce_sum(ad.square(ad.subtract(ref, xv))), weights.Q_r),
            ad.scale(ad.reduce_sum(ad.square(uv)), weights.Q_u),
        )
    if objective.kind == "split-tracking":
        ref = objective.reference.resolve(xi, batch)
        tracked, rest = _split_columns(xv, objective.track_indices, xv.values.shape[1])
        cost = ad.scale(ad.reduce_sum(ad.square(ad.subtract(tracked, ref))), weights.Q_r)
        if rest is not None:
            cost = ad.add(cost, ad.scale(ad.reduce_sum(ad.square(rest)), weights.Q_x))
        return cost
    raise ValueError(f"{objective.kind} has no per-stage cost")


@dataclass
class LossParts:
    """J and its decomposition; total == objective + state + inputs + terminal."""

    total: ad.Tensor
    objective: ad.Tensor
    state: ad.Tensor
    inputs: ad.Tensor
    terminal: ad.Tensor

    def floats(self) -> dict[str, float]:
        return {
            "total": self.total.item(),
            "objective": self.objective.item(),
            "state": self.state.item(),
            "inputs": self.inputs.item(),
            "terminal": self.terminal.item(),
        }


def total_loss(states, actions, xi, objective, constraints, weights) -> LossParts:
    """Normalized loss over a batch of rollouts.

    ``states``/``actions`` are the per-step tensors from ``rollout_tensors``
    (or stacked eager arrays of the same layout); ``xi`` is the (b, d)
    parameter block or None.
    """
    states = [ad.as_tensor(s) for s in states]
    actions = [ad.as_tensor(a) for a in actions]
    horizon = len(actions)
    if len(states) != horizon + 1:
        raise ValueError(f"{len(states)} states do not bracket {horizon} actions")
    batch = states[0].values.shape[0]
    norm = 1.0 / (batch * horizon)

    obj = ad.as_tensor(0.0)
    if objective.kind == "terminal-smoothing":
        target = objective.target.resolve(xi, batch)
        obj = ad.scale(ad.reduce_sum(ad.square(ad.subtract(states[-1], target))), weights.Q_r)
        for k in range(horizon - 1):
            obj = ad.add(obj, ad.scale(
                ad.reduce_sum(ad.square(ad.subtract(actions[k + 1], actions[k]))), weights.Q_du))
        for k in range(horizon):
            obj = ad.add(obj, ad.scale(
                ad.reduce_sum(ad.square(ad.subtract(states[k + 1], states[k]))), weights.Q_dx))
            obj = ad.add(obj, ad.scale(ad.reduce_sum(ad.square(actions[k])), weights.Q_u))
    else:
        for k in range(horizon):
            obj = ad.add(obj, stage_cost(objective, weights, states[k], actions[k], xi))

    sp = ad.as_tensor(0.0)
    ip = ad.as_tensor(0.0)
    for k in range(horizon):
        sp = ad.add(sp, state_penalty(constraints, states[k], xi, weights.Q_h))
        ip = ad.add(ip, input_penalty(constraints, actions[k], xi, weights.Q_g))
        if constraints.contraction is not None:
            sp = ad.add(sp, contraction_penalty(
                states[k], states[k + 1], constraints.contraction.rate, weights.Q_c))

    term = ad.scale(ad.reduce_sum(ad.square(states[-1])), weights.Q_f)
    if constraints.terminal_box is not None:
        term = ad.add(term, penalty(constraints.terminal_box.residuals(states[-1], xi),
                                    weights.Q_f, constraints.terminal_box.margin))

    obj = ad.scale(obj, norm)
    sp = ad.scale(sp, norm)
    ip = ad.scale(ip, norm)
    term = ad.scale(term, norm)
    total = ad.add(ad.add(obj, sp), ad.add(ip, term))
    return LossParts(total, obj, sp, ip, term)


def batch_from_trajectories(trajectories):
    """Stack eager trajectories into the (states, actions, xi) layout."""
    horizon = trajectories[0].horizon
    if any(t.horizon != horizon for t in trajectories):
        raise ValueError("trajectories have mixed horizons")
    states = [np.stack([t.states[k] for t in trajectories]) for k in range(horizon + 1)]
    actions = [np.stack([t.actions[k] for t in trajectories]) for k in range(horizon)]
    xi_dim = trajectories[0].xi.size
    xi = np.stack([t.xi for t in trajectories]) if xi_dim else None
    return states, actions, xi
