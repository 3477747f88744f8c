"""Sampling-based certification of a trained policy.

Rolls the closed loop over a fresh scenario set, scores every scenario with
an exact pass/fail indicator (no penalty smoothing), and turns the observed
success fraction into a distribution-free lower confidence bound on the true
success probability via Hoeffding's inequality.  The policy certifies at
level beta when that lower bound reaches beta.

The indicator checks state and input constraints at steps 0..N-1 and
membership of the final state in the terminal set, all non-strict, so a
trajectory that rides a boundary still passes.  A contraction term in the
constraint set shapes training but is not part of the pass/fail decision.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import policy as pol

TERMINAL_KINDS = ("box", "ball")


@dataclass(frozen=True)
class TerminalSet:
    """Where the final state must land: an axis box or a 2-norm ball.

    A ball may be centered on a parameter block (``center`` resolving per
    scenario) or on the origin when ``center`` is None.
    """

    kind: str
    lower: tuple = ()
    upper: tuple = ()
    radius: float = 0.0
    center: object = None  # Constant | XiSlice | None

    def __post_init__(self):
        if self.kind not in TERMINAL_KINDS:
            raise ValueError(f"unknown terminal set kind {self.kind!r}")
        if self.kind == "box":
            lo = np.asarray(self.lower, dtype=np.float64)
            hi = np.asarray(self.upper, dtype=np.float64)
            if lo.size == 0 or lo.shape != hi.shape or np.any(lo > hi):
                raise ValueError("terminal box needs matching lower <= upper vectors")
            object.__setattr__(self, "lower", tuple(lo.tolist()))
            object.__setattr__(self, "upper", tuple(hi.tolist()))
        else:
            if self.radius <= 0:
                raise ValueError(f"terminal ball radius must be positive, got {self.radius}")

    def contains(self, x_final: np.ndarray, xi) -> np.ndarray:
        """Boolean per row; boundaries count as inside."""
        x_final = np.atleast_2d(np.asarray(x_final, dtype=np.float64))
        if self.kind == "box":
            lo = np.asarray(self.lower)
            hi = np.asarray(self.upper)
            return np.all((x_final >= lo) & (x_final <= hi), axis=1)
        center = 0.0
        if self.center is not None:
            center = np.asarray(self.center.resolve(xi, x_final.shape[0]))
        return np.linalg.norm(x_final - center, axis=1) <= self.radius


def _rows_ok(residuals) -> np.ndarray:
    vals = residuals.values
    if vals.ndim == 1:
        vals = vals[:, None]
    return np.all(vals <= 0.0, axis=1)


def satisfied(states, actions, xi, constraints, terminal: TerminalSet) -> np.ndarray:
    """Exact per-scenario indicator over stacked rollouts.

    ``states`` is (b, N+1, n_x), ``actions`` (b, N, n_u), ``xi`` (b, d) or
    None.  State and input constraints apply at steps 0..N-1 only; the final
    state answers to the terminal set instead.
    """
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    b, n_steps = actions.shape[0], actions.shape[1]
    if states.shape[1] != n_steps + 1:
        raise ValueError(f"{states.shape[1]} states do not bracket {n_steps} actions")
    ok = np.ones(b, dtype=bool)
    for k in range(n_steps):
        for c in constraints.state:
            ok &= _rows_ok(c.residuals(states[:, k, :], xi))
        for c in constraints.inputs:
            ok &= _rows_ok(c.residuals(actions[:, k, :], xi))
    return ok & terminal.contains(states[:, -1, :], xi)


def empirical_risk(policy, model, scenarios, constraints, terminal, mode,
                   chunk: int = 1024):
    """Success fraction and the per-pair pass flags, in pair order."""
    flags = np.zeros(scenarios.size, dtype=bool)
    all_idx = np.arange(scenarios.size)
    for start in range(0, scenarios.size, chunk):
        idx = all_idx[start:start + chunk]
        i_idx = idx // scenarios.s
        j_idx = idx % scenarios.s
        xi = scenarios.xi[i_idx] if scenarios.xi.shape[1] else None
        states, actions = dyn.rollout_tensors(
            model, lambda z: pol.apply_layers(policy.layers, z),
            scenarios.x0[i_idx], xi, scenarios.omega[j_idx], mode, model.n_u)
        states_arr = np.stack([s.values for s in states], axis=1)
        actions_arr = np.stack([a.values for a in actions], axis=1)
        flags[idx] = satisfied(states_arr, actions_arr, xi, constraints, terminal)
    return float(flags.mean()), flags


def hoeffding_alpha(r: int, delta: float) -> float:
    """One-sided Hoeffding margin sqrt(-ln(delta / 2) / (2 r))."""
    if r < 1:
        raise ValueError(f"need at least one sample, got r={r}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must sit in (0, 1), got {delta}")
    return math.sqrt(-math.log(delta / 2.0) / (2.0 * r))


REPORT_KEYS = ("r", "m", "s", "beta", "delta", "mu_tilde", "alpha",
               "lower_bound", "verdict", "policy_checkpoint", "seed")


@dataclass(frozen=True)
class CertificationReport:
    r: int
    m: int
    s: int
    beta: float
    delta: float
    mu_tilde: float
    alpha: float
    lower_bound: float
    verdict: bool
    policy_checkpoint: str
    seed: int

    def to_dict(self) -> dict:
        return {k: asdict(self)[k] for k in REPORT_KEYS}


def certify(mu_tilde: float, r: int, m: int, s: int, beta: float, delta: float,
            policy_checkpoint: str = "", seed: int = 0) -> CertificationReport:
    """Apply the confidence margin; certified iff mu_tilde - alpha >= beta."""
    if not 0.0 <= mu_tilde <= 1.0:
        raise ValueError(f"mu_tilde must sit in [0, 1], got {mu_tilde}")
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must sit in (0, 1], got {beta}")
    alpha = hoeffding_alpha(r, delta)
    lower = mu_tilde - alpha
    return CertificationReport(
        r=r, m=m, s=s, beta=float(beta), delta=float(delta),
        mu_tilde=float(mu_tilde), alpha=alpha, lower_bound=lower,
        verdict=bool(lower >= beta), policy_checkpoint=str(policy_checkpoint),
        seed=int(seed))


def run_certification(policy, model, scenarios, constraints, terminal, mode,
                      beta, delta, policy_checkpoint="", chunk: int = 1024):
    """Roll, score and bound in one call; returns (report, pass flags)."""
    mu_tilde, flags = empirical_risk(
        policy, model, scenarios, constraints, terminal, mode, chunk=chunk)
    report = certify(mu_tilde, scenarios.size, scenarios.m, scenarios.s,
                     beta, delta, policy_checkpoint, scenarios.seed)
    return report, flags


def save_report(report: CertificationReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1)
        fh.write("\n")


def load_report(path) -> CertificationReport:
    data = json.loads(Path(path).read_text())
    missing = set(REPORT_KEYS) - set(data)
    if missing:
        raise ValueError(f"report is missing keys {sorted(missing)}")
    return CertificationReport(**{k: data[k] for k in REPORT_KEYS})
