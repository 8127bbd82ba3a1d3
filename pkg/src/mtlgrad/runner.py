"""Trajectory driver: evaluate gradients, combine, step an optimizer, and
record a full per-step trace, plus the descent-bound audit on smooth
instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .combiners import Combiner
from .core import NonFinite, SimplexWeights, TaskGradientSet

OPTIMIZER_KINDS = ("gd", "adam")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 2e-3
    steps: int = 50000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"kind must be one of {OPTIMIZER_KINDS}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "AdamState":
        return cls(m=np.zeros(dim), v=np.zeros(dim))


def optimizer_step(theta: np.ndarray, d: np.ndarray, cfg: OptimizerConfig,
                   state: AdamState | None = None) -> np.ndarray:
    """One optimizer update treating d as the raw gradient."""
    if cfg.kind == "gd":
        return theta - cfg.lr * d
    if state is None:
        raise ValueError("adam needs an AdamState")
    state.t += 1
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * d
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * d * d
    m_hat = state.m / (1.0 - cfg.beta1 ** state.t)
    v_hat = state.v / (1.0 - cfg.beta2 ** state.t)
    return theta - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


@dataclass
class TrajectoryTrace:
    """Per-step record of a full optimization run.

    Row t holds the state at theta_t together with the combiner output
    evaluated there; the direction in the final row is computed but never
    applied. All arrays have steps+1 rows on a clean run; an aborted run
    carries a truncated trace and an error marker in metadata.
    """

    theta: np.ndarray          # (n+1, m)
    losses: np.ndarray         # (n+1, K)
    weights: np.ndarray        # (n+1, K)
    d: np.ndarray              # (n+1, m)
    d_norm: np.ndarray         # (n+1,)
    imbalance: np.ndarray      # (n+1,), NaN when undefined
    cos_theta: np.ndarray      # (n+1,), NaN when not reported
    pareto_fail: np.ndarray    # (n+1,) bool
    skipped: np.ndarray        # (n+1,) bool
    metadata: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.theta.shape[0] - 1

    def weighted_loss(self, task_weights=None) -> np.ndarray:
        if task_weights is None:
            return self.losses.sum(axis=1)
        return self.losses @ np.asarray(task_weights)


def _safe_ratio(norms: np.ndarray) -> float:
    mn = norms.min()
    return float(norms.max() / mn) if mn > 0.0 else float("nan")


def run_trajectory(objective, combiner: Combiner, opt: OptimizerConfig,
                   init) -> TrajectoryTrace:
    """Iterate gradient evaluation, combination, and optimizer updates.

    The objective must expose losses(theta) -> (K,) and gradients(theta) ->
    TaskGradientSet (pre-weighted if the task set is a weighted one). A
    non-finite loss or gradient aborts with a partial trace.
    """
    theta = np.asarray(init, dtype=np.float64)
    m = theta.shape[0]
    K = objective.num_tasks
    n = opt.steps
    combiner.reset()
    adam = AdamState.zeros(m) if opt.kind == "adam" else None

    tr_theta = np.zeros((n + 1, m))
    tr_losses = np.zeros((n + 1, K))
    tr_w = np.zeros((n + 1, K))
    tr_d = np.zeros((n + 1, m))
    tr_dn = np.zeros(n + 1)
    tr_r = np.zeros(n + 1)
    tr_cos = np.zeros(n + 1)
    tr_pf = np.zeros(n + 1, dtype=bool)
    tr_skip = np.zeros(n + 1, dtype=bool)
    meta = {"optimizer": opt.kind, "lr": opt.lr, "steps": n,
            "method": combiner.method, "error": None}

    def truncate(t):
        return TrajectoryTrace(
            theta=tr_theta[:t], losses=tr_losses[:t], weights=tr_w[:t],
            d=tr_d[:t], d_norm=tr_dn[:t], imbalance=tr_r[:t],
            cos_theta=tr_cos[:t], pareto_fail=tr_pf[:t],
            skipped=tr_skip[:t], metadata=meta)

    for t in range(n + 1):
        losses = np.asarray(objective.losses(theta), dtype=np.float64)
        if not np.all(np.isfinite(losses)) or not np.all(np.isfinite(theta)):
            meta["error"] = f"non-finite state at step {t}"
            return truncate(t)
        try:
            G = objective.gradients(theta)
            out = combiner(G)
        except NonFinite:
            meta["error"] = f"non-finite gradient at step {t}"
            return truncate(t)
        tr_theta[t] = theta
        tr_losses[t] = losses
        w = out.weights.w
        tr_w[t] = w if w.shape[0] == K else np.nan
        tr_d[t] = out.d
        tr_dn[t] = float(np.linalg.norm(out.d))
        tr_r[t] = _safe_ratio(G.row_norms())
        mu_like = out.mu if out.mu is not None else out.cos_theta
        tr_cos[t] = mu_like if mu_like is not None else float("nan")
        tr_pf[t] = out.pareto_failure
        tr_skip[t] = out.skipped
        if t < n:
            theta = optimizer_step(theta, out.d, opt, adam)
    return truncate(n + 1)


class QuadraticTwoTask:
    """Two quadratic bowls L_i = ||theta - a_i||^2 (2-smooth), used by the
    descent-bound audit."""

    num_tasks = 2

    def __init__(self, a1, a2):
        self.anchors = np.stack([np.asarray(a1, dtype=np.float64),
                                 np.asarray(a2, dtype=np.float64)])

    def losses(self, theta) -> np.ndarray:
        diff = theta - self.anchors
        return np.einsum("ij,ij->i", diff, diff)

    def gradients(self, theta) -> TaskGradientSet:
        return TaskGradientSet(2.0 * (theta - self.anchors))


@dataclass(frozen=True)
class BoundViolation:
    step: int
    decrease: float
    bound: float


@dataclass(frozen=True)
class BoundAuditReport:
    steps_checked: int
    violations: tuple[BoundViolation, ...]
    loose_violations: tuple[BoundViolation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def descent_bound_audit(trace: TrajectoryTrace, objective, c: float,
                        alpha: float, tol: float = 1e-9) -> BoundAuditReport:
    """Check the per-step decrease of the mean loss against the refined
    trust-region descent inequality.

    For each step: mean_loss(t+1) - mean_loss(t) <= -(alpha/2) *
    (1 - c^2 + 2c cos phi_t) * ||g0||^2 + tol, with phi_t the angle between
    the mean gradient and the solved weighted gradient at theta_t. When the
    weighted gradient vanishes the direction collapses to g0 and the bound
    degrades to -(alpha/2) ||g0||^2. The looser (1 - c^2) bound is checked
    separately wherever cos phi_t >= 0.
    """
    n = trace.steps
    violations = []
    loose = []
    for t in range(n):
        G = objective.gradients(trace.theta[t])
        g0 = G.mean_gradient()
        n0 = float(np.linalg.norm(g0))
        gw = G.combine(trace.weights[t])
        ngw = float(np.linalg.norm(gw))
        mean_now = float(np.mean(objective.losses(trace.theta[t])))
        mean_next = float(np.mean(objective.losses(trace.theta[t + 1])))
        decrease = mean_next - mean_now
        if n0 == 0.0:
            # both sides vanish
            if decrease > tol:
                violations.append(BoundViolation(t, decrease, 0.0))
            continue
        if ngw > 0.0:
            cos_phi = float(g0 @ gw) / (n0 * ngw)
            bound = -(alpha / 2.0) * (1.0 - c * c + 2.0 * c * cos_phi) * n0 * n0
        else:
            cos_phi = None
            bound = -(alpha / 2.0) * n0 * n0
        if decrease > bound + tol:
            violations.append(BoundViolation(t, decrease, bound))
        if cos_phi is not None and cos_phi >= 0.0:
            loose_bound = -(alpha / 2.0) * (1.0 - c * c) * n0 * n0
            if decrease > loose_bound + tol:
                loose.append(BoundViolation(t, decrease, loose_bound))
    return BoundAuditReport(steps_checked=n, violations=tuple(violations),
                            loose_violations=tuple(loose))
