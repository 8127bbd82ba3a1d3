"""Gradient-combination strategies.

Each strategy maps a TaskGradientSet (plus configuration) to a
CombineOutcome. The Nash family carries per-trajectory state (the previous
step's weights); everything else is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    CombineOutcome,
    PositiveWeights,
    SimplexWeights,
    TaskGradientSet,
    ZeroVector,
    cosine,
    direction_harms_some_task,
    gram,
)
from .seeding import splitmix64
from .solvers import (
    DEFAULT_SOLVER,
    SkipSignal,
    SolverConfig,
    mgda_minnorm,
    minimize_cagrad_family,
    nash_weights,
)

MU_MODES = ("PM", "LM", "DC")
OBJECTIVE_VARIANTS = ("alg1", "eq8")


@dataclass(frozen=True)
class CombinerConfig:
    c: float = 0.4
    mu_mode: str = "PM"
    objective_variant: str = "alg1"
    r_threshold: float = 2.0
    sim_threshold: float = 0.0
    update_every: int = 1
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not 0.0 <= self.c <= 1.0:
            raise ValueError("c must lie in [0, 1]")
        if self.mu_mode not in MU_MODES:
            raise ValueError(f"mu_mode must be one of {MU_MODES}")
        if self.objective_variant not in OBJECTIVE_VARIANTS:
            raise ValueError(f"objective_variant must be one of {OBJECTIVE_VARIANTS}")
        if self.r_threshold < 1.0:
            raise ValueError("r_threshold must be at least 1")
        if not -1.0 <= self.sim_threshold <= 1.0:
            raise ValueError("sim_threshold must lie in [-1, 1]")
        if self.update_every < 1:
            raise ValueError("update_every must be at least 1")


DEFAULT_CONFIG = CombinerConfig()


@dataclass
class NashState:
    """Previous-step weights reused whenever the Nash solver signals a skip."""

    prev_weights: PositiveWeights | None = None


def _uniform(K: int) -> SimplexWeights:
    return SimplexWeights(np.full(K, 1.0 / K))


def _outcome(d, weights, G, **kw) -> CombineOutcome:
    return CombineOutcome(d=d, weights=weights,
                          pareto_failure=direction_harms_some_task(d, G), **kw)


def ls_combine(G: TaskGradientSet) -> CombineOutcome:
    """Linear scalarization: the unweighted mean of the task gradients."""
    return _outcome(G.mean_gradient(), _uniform(G.num_tasks), G)


def mgda_combine(G: TaskGradientSet,
                 cfg: CombinerConfig = DEFAULT_CONFIG) -> CombineOutcome:
    """Min-norm-point direction over the convex hull of the task gradients."""
    w, iters = mgda_minnorm(G, cfg.solver, with_iters=True)
    d = G.combine(w.w)
    return _outcome(d, w, G, solver_iters=iters)


def pcgrad_combine(G: TaskGradientSet, cfg: CombinerConfig = DEFAULT_CONFIG,
                   rng: np.random.Generator | None = None) -> CombineOutcome:
    """Project each gradient off the others it conflicts with, then average.

    The projection order is shuffled per task from the supplied generator;
    zero-norm projection targets are skipped.
    """
    if rng is None:
        rng = np.random.default_rng(splitmix64(cfg.seed))
    rows = G.rows
    K = G.num_tasks
    sq_norms = np.einsum("ij,ij->i", rows, rows)
    projected = rows.copy()
    for i in range(K):
        order = rng.permutation(K)
        gi = projected[i]
        for j in order:
            if j == i or sq_norms[j] == 0.0:
                continue
            dot = float(gi @ rows[j])
            if dot < 0.0:
                gi = gi - (dot / sq_norms[j]) * rows[j]
        projected[i] = gi
    d = projected.mean(axis=0)
    return _outcome(d, _uniform(K), G)


def estimate_mu(G: TaskGradientSet, mode: str = "PM",
                solver: SolverConfig = DEFAULT_SOLVER) -> float:
    """Imbalance-sensitivity coefficient.

    PM: cosine between the mean gradient and the min-norm point (in [0, 1] by
    min-norm optimality). LM: cosine between the mean gradient and the
    smallest-norm task gradient (may be negative). DC: 1 / (1 + ln r) with r
    the max/min norm ratio.
    """
    if mode == "DC":
        norms = G.row_norms()
        if np.any(norms == 0.0):
            raise ZeroVector("imbalance ratio undefined for a zero gradient")
        r = float(norms.max() / norms.min())
        return 1.0 / (1.0 + math.log(r))
    g0 = G.mean_gradient()
    if float(np.linalg.norm(g0)) == 0.0:
        raise ZeroVector("mean gradient is zero")
    if mode == "PM":
        w = mgda_minnorm(G, solver)
        gm = G.combine(w.w)
        # a min-norm point that cancels to rounding residue means the
        # instance is Pareto stationary: fall back to pure min-norm behavior
        if float(np.linalg.norm(gm)) <= 1e-9 * float(G.row_norms().max()):
            return 1.0
        # nonnegative by min-norm optimality; clamp solver rounding
        return max(0.0, cosine(g0, gm))
    if mode == "LM":
        norms = G.row_norms()
        if np.any(norms == 0.0):
            raise ZeroVector("smallest-norm gradient is zero")
        return cosine(g0, G.rows[int(np.argmin(norms))])
    raise ValueError(f"unknown mu mode {mode!r}")


def _cagrad_direction(G: TaskGradientSet, w: SimplexWeights, c: float,
                      iters: int = 0, mu: float | None = None) -> CombineOutcome:
    """Assemble d = g0 + (sqrt(phi)/||g_w||) g_w from solved weights."""
    g0 = G.mean_gradient()
    n0 = float(np.linalg.norm(g0))
    gw = G.combine(w.w)
    ngw = float(np.linalg.norm(gw))
    if ngw > 0.0:
        d = g0 + (c * n0 / ngw) * gw
        cos_phi = cosine(g0, gw) if n0 > 0.0 else None
    else:
        d = g0
        cos_phi = None
    return _outcome(d, w, G, solver_iters=iters, mu=mu, cos_theta=cos_phi)


def cagrad_combine(G: TaskGradientSet,
                   cfg: CombinerConfig = DEFAULT_CONFIG) -> CombineOutcome:
    """Conflict-averse direction: mean gradient plus a trust-region step
    toward the solved weighted gradient, with ||d - g0|| = c ||g0||."""
    g0 = G.mean_gradient()
    n0 = float(np.linalg.norm(g0))
    if n0 == 0.0:
        return _outcome(np.zeros(G.dim), _uniform(G.num_tasks), G)
    sqrt_phi = cfg.c * n0
    if sqrt_phi == 0.0:
        return _outcome(g0, _uniform(G.num_tasks), G)
    w, iters = minimize_cagrad_family(G, 1.0, sqrt_phi, cfg.solver,
                                      with_iters=True)
    return _cagrad_direction(G, w, cfg.c, iters)


def imgrad_cagrad_combine(G: TaskGradientSet,
                          cfg: CombinerConfig = DEFAULT_CONFIG) -> CombineOutcome:
    """Imbalance-sensitive conflict-averse direction.

    The solved objective interpolates between the push-away term and the
    min-norm term with weight mu; the update formula is identical to the
    vanilla conflict-averse one.
    """
    g0 = G.mean_gradient()
    n0 = float(np.linalg.norm(g0))
    if n0 == 0.0:
        return _outcome(np.zeros(G.dim), _uniform(G.num_tasks), G)
    mu = min(1.0, max(0.0, estimate_mu(G, cfg.mu_mode, cfg.solver)))
    sqrt_phi = cfg.c * n0
    a = 1.0 - mu
    b = mu * sqrt_phi
    if a + b <= 0.0:
        # mu = 1 with c = 0: objective vanishes, direction is g0 regardless
        w = mgda_minnorm(G, cfg.solver)
        return _cagrad_direction(G, w, cfg.c, 0, mu)
    w, iters = minimize_cagrad_family(G, a, b, cfg.solver,
                                      squared=(cfg.objective_variant == "eq8"),
                                      with_iters=True)
    return _cagrad_direction(G, w, cfg.c, iters, mu)


def _nash_fallback(G: TaskGradientSet, state: NashState) -> CombineOutcome:
    prev = state.prev_weights
    if prev is None or len(prev) != G.num_tasks:
        prev = PositiveWeights(np.ones(G.num_tasks))
    d = G.combine(prev.w)
    return _outcome(d, prev, G, skipped=True)


def nash_combine(G: TaskGradientSet, state: NashState,
                 cfg: CombinerConfig = DEFAULT_CONFIG) -> CombineOutcome:
    """Nash bargaining weights; reuses the previous step's weights on skip."""
    try:
        w, iters = nash_weights(G, cfg.solver, with_iters=True)
    except SkipSignal:
        return _nash_fallback(G, state)
    state.prev_weights = w
    d = G.combine(w.w)
    return _outcome(d, w, G, solver_iters=iters)


def imgrad_nash_combine(G: TaskGradientSet, state: NashState,
                        cfg: CombinerConfig = DEFAULT_CONFIG) -> CombineOutcome:
    """Imbalance-sensitive Nash weighting.

    Minimizes (1-mu) * sum_i g_i'Gw - mu * sum_i [ln w_i + ln(g_i'Gw)] over
    positive weights by clipped projected gradient descent. Falls back to the
    previous step's weights when the returned point still has a nonpositive
    projected norm.
    """
    try:
        mu = min(1.0, max(0.0, estimate_mu(G, "PM", cfg.solver)))
    except ZeroVector:
        return _nash_fallback(G, state)
    M = gram(G)
    K = G.num_tasks
    col_sums = M.sum(axis=0)  # gradient of sum_i g_i'Gw
    lo, hi = 1e-9, 1e6
    eps = 1e-12
    if state.prev_weights is not None and len(state.prev_weights) == K:
        w = state.prev_weights.w.copy()
    else:
        w = np.ones(K)

    def jval(w):
        Mw = M @ w
        val = (1.0 - mu) * float(col_sums @ w)
        val -= mu * float(np.sum(np.log(w)) + np.sum(np.log(np.maximum(Mw, eps))))
        return val, Mw

    f, Mw = jval(w)
    step = 1.0
    iters = 0
    for iters in range(1, cfg.solver.max_iters + 1):
        inv = np.where(Mw > eps, 1.0 / np.maximum(Mw, eps), 0.0)
        grad = (1.0 - mu) * col_sums - mu * (1.0 / w + M @ inv)
        if float(np.linalg.norm(w - np.clip(w - grad, lo, hi))) <= cfg.solver.tol:
            break
        step = min(step * 2.0, 1e8)
        while True:
            cand = np.clip(w - step * grad, lo, hi)
            fc, Mc = jval(cand)
            if fc <= f - 1e-4 * float(grad @ (w - cand)) or step < 1e-16:
                break
            step *= 0.5
        w, f, Mw = cand, fc, Mc

    if np.any(Mw <= 0.0):
        out = _nash_fallback(G, state)
        return replace(out, mu=mu, solver_iters=iters)
    weights = PositiveWeights(w)
    state.prev_weights = weights
    d = G.combine(w)
    return _outcome(d, weights, G, mu=mu, solver_iters=iters)


def adaptive_threshold_combine(G: TaskGradientSet, inner,
                               cfg: CombinerConfig = DEFAULT_CONFIG,
                               mode: str = "imbalance") -> CombineOutcome:
    """Apply the inner combiner only past an imbalance or conflict threshold;
    fall back to linear scalarization otherwise."""
    if mode == "imbalance":
        norms = G.row_norms()
        if np.any(norms == 0.0):
            raise ZeroVector("imbalance ratio undefined for a zero gradient")
        fire = float(norms.max() / norms.min()) > cfg.r_threshold
    elif mode == "conflict":
        min_cos = 1.0
        for i in range(G.num_tasks):
            for j in range(i + 1, G.num_tasks):
                min_cos = min(min_cos, cosine(G.rows[i], G.rows[j]))
        fire = min_cos < cfg.sim_threshold
    else:
        raise ValueError(f"unknown adaptive mode {mode!r}")
    return inner(G) if fire else ls_combine(G)


class Combiner:
    """Stateful, callable wrapper around one combination strategy.

    family is "cagrad" for trust-region methods (cached weights recombine via
    the conflict-averse update), "linear" or "nash" otherwise (cached weights
    recombine as G'w).
    """

    family = "linear"
    method = "?"

    def __call__(self, G: TaskGradientSet) -> CombineOutcome:
        raise NotImplementedError

    def reset(self) -> None:
        """Drop any per-trajectory state before starting a new run."""


class _LS(Combiner):
    method = "ls"

    def __init__(self, cfg):
        self.cfg = cfg

    def __call__(self, G):
        return ls_combine(G)


class _MGDA(Combiner):
    method = "mgda"

    def __init__(self, cfg):
        self.cfg = cfg

    def __call__(self, G):
        return mgda_combine(G, self.cfg)


class _PCGrad(Combiner):
    method = "pcgrad"

    def __init__(self, cfg):
        self.cfg = cfg
        self.calls = 0

    def __call__(self, G):
        rng = np.random.default_rng(splitmix64(self.cfg.seed, self.calls))
        self.calls += 1
        return pcgrad_combine(G, self.cfg, rng)

    def reset(self):
        self.calls = 0


class _CAGrad(Combiner):
    family = "cagrad"
    method = "cagrad"

    def __init__(self, cfg):
        self.cfg = cfg

    def __call__(self, G):
        return cagrad_combine(G, self.cfg)


class _IMGrad(Combiner):
    family = "cagrad"
    method = "imgrad"

    def __init__(self, cfg):
        self.cfg = cfg

    def __call__(self, G):
        return imgrad_cagrad_combine(G, self.cfg)


class _Nash(Combiner):
    family = "nash"
    method = "nash"

    def __init__(self, cfg):
        self.cfg = cfg
        self.state = NashState()

    def __call__(self, G):
        return nash_combine(G, self.state, self.cfg)

    def reset(self):
        self.state = NashState()


class _IMGradNash(Combiner):
    family = "nash"
    method = "imgrad-nash"

    def __init__(self, cfg):
        self.cfg = cfg
        self.state = NashState()

    def __call__(self, G):
        return imgrad_nash_combine(G, self.state, self.cfg)

    def reset(self):
        self.state = NashState()


class _Adaptive(Combiner):
    method = "adaptive"

    def __init__(self, cfg, inner: Combiner, mode: str = "imbalance"):
        self.cfg = cfg
        self.inner = inner
        self.mode = mode

    def __call__(self, G):
        return adaptive_threshold_combine(G, self.inner, self.cfg, self.mode)

    def reset(self):
        self.inner.reset()


class _UpdateEvery(Combiner):
    """Recompute the inner combiner's weights every `period` calls; between
    recomputes, form the direction from the cached weights and fresh
    gradients."""

    def __init__(self, inner: Combiner, period: int):
        if period < 1:
            raise ValueError("period must be at least 1")
        self.inner = inner
        self.period = period
        self.family = inner.family
        self.method = inner.method
        self.calls = 0
        self.cached = None

    def __call__(self, G):
        if self.calls % self.period == 0 or self.cached is None:
            out = self.inner(G)
            self.cached = out.weights
        else:
            w = self.cached
            if self.family == "cagrad":
                c = getattr(self.inner, "cfg", DEFAULT_CONFIG).c
                if isinstance(w, SimplexWeights):
                    out = _cagrad_direction(G, w, c)
                else:
                    out = _outcome(G.combine(w.w), w, G)
            else:
                out = _outcome(G.combine(w.w), w, G)
        self.calls += 1
        return out

    def reset(self):
        self.calls = 0
        self.cached = None
        self.inner.reset()


def wrap_update_every(inner: Combiner, period: int) -> Combiner:
    return inner if period == 1 else _UpdateEvery(inner, period)


_METHODS = {
    "ls": _LS,
    "mgda": _MGDA,
    "pcgrad": _PCGrad,
    "cagrad": _CAGrad,
    "imgrad": _IMGrad,
    "nash": _Nash,
    "imgrad-nash": _IMGradNash,
}

METHOD_NAMES = tuple(_METHODS) + ("adaptive",)


def make_combiner(method: str, cfg: CombinerConfig = DEFAULT_CONFIG,
                  adaptive_inner: str = "mgda",
                  adaptive_mode: str = "imbalance") -> Combiner:
    """Build a stateful combiner for a trajectory run."""
    if method == "adaptive":
        inner = make_combiner(adaptive_inner, cfg)
        comb = _Adaptive(cfg, inner, adaptive_mode)
    elif method in _METHODS:
        comb = _METHODS[method](cfg)
    else:
        raise ValueError(f"unknown method {method!r}")
    return wrap_update_every(comb, cfg.update_every)
