"""Diagnostic quantities: similarity/conflict, imbalance ratio, Pareto
failure, individual progress, the overall-degradation percentage, and the
imbalance-vs-cosine correlation study.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import TaskGradientSet, ZeroVector, cosine, direction_harms_some_task
from .seeding import splitmix64
from .solvers import DEFAULT_SOLVER, mgda_minnorm


class ZeroBaseline(ValueError):
    """A baseline metric value of zero makes the relative change undefined."""


def gradient_similarity(g_i, g_j) -> float:
    """Cosine similarity between two task gradients."""
    return cosine(g_i, g_j)


def is_conflicting(g_i, g_j) -> bool:
    """Gradients conflict when their similarity is strictly negative."""
    return cosine(g_i, g_j) < 0.0


def imbalance_ratio(G: TaskGradientSet) -> float:
    """Largest over smallest task-gradient norm (>= 1)."""
    norms = G.row_norms()
    if np.any(norms == 0.0):
        raise ZeroVector("imbalance ratio undefined for a zero gradient")
    return float(norms.max() / norms.min())


def is_imbalanced(G: TaskGradientSet) -> bool:
    return imbalance_ratio(G) > 1.0


def pareto_failure(d, G: TaskGradientSet) -> bool:
    """True iff the combined direction has negative cosine with some nonzero
    task gradient. A zero direction is Pareto-stationary, not a failure."""
    return direction_harms_some_task(np.asarray(d, dtype=np.float64), G)


def individual_progress(losses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-task loss trajectories normalized by their initial values.

    losses is a (steps+1, K) array. Returns (ratios, defined) where defined
    flags tasks with a nonzero initial loss; undefined tasks carry NaN.
    """
    losses = np.asarray(losses, dtype=np.float64)
    initial = losses[0]
    defined = initial != 0.0
    ratios = np.full_like(losses, np.nan)
    ratios[:, defined] = losses[:, defined] / initial[defined]
    return ratios, defined


def delta_m(metrics: list[tuple[float, float, int]]) -> float:
    """Mean relative degradation versus per-task baselines, in percent.

    Each entry is (method value, baseline value, higher_is_better flag);
    lower output is better, improvements are negative.
    """
    if not metrics:
        raise ValueError("need at least one metric")
    total = 0.0
    for m_m, m_b, delta in metrics:
        if m_b == 0.0:
            raise ZeroBaseline("baseline metric value is zero")
        total += (-1.0) ** delta * (m_m - m_b) / m_b
    return 100.0 * total / len(metrics)


@dataclass(frozen=True)
class CorrelationReport:
    n_samples: int
    spearman_rho: float | None
    inv_ratio_range: tuple[float, float]
    cos_theta_range: tuple[float, float]
    degenerate: bool


def sample_imbalanced_pair(rng: np.random.Generator, dim: int = 10,
                           ratio_range: tuple[float, float] = (1.0, 100.0)) -> TaskGradientSet:
    """Random two-task gradient set with log-uniform norm ratio and a random
    angle between the tasks."""
    u = rng.normal(size=dim)
    u /= np.linalg.norm(u)
    v = rng.normal(size=dim)
    v -= (v @ u) * u
    v /= np.linalg.norm(v)
    angle = rng.uniform(0.0, math.pi)
    w = math.cos(angle) * u + math.sin(angle) * v
    lo, hi = ratio_range
    r = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    scale = math.exp(rng.uniform(-1.0, 1.0))
    return TaskGradientSet(np.stack([scale * r * u, scale * w]))


def correlation_study(n_samples: int = 1000, seed: int = 0,
                      ratio_range: tuple[float, float] = (1.0, 100.0)) -> CorrelationReport:
    """Spearman correlation between the inverse imbalance ratio and the
    cosine between the mean gradient and the min-norm point."""
    if n_samples < 100:
        raise ValueError("need at least 100 samples")
    rng = np.random.default_rng(splitmix64(seed, 0xC0))
    inv_r = np.empty(n_samples)
    cos_t = np.empty(n_samples)
    for k in range(n_samples):
        G = sample_imbalanced_pair(rng, ratio_range=ratio_range)
        inv_r[k] = 1.0 / imbalance_ratio(G)
        w = mgda_minnorm(G, DEFAULT_SOLVER)
        gm = G.combine(w.w)
        if float(np.linalg.norm(gm)) == 0.0:
            cos_t[k] = 1.0
        else:
            cos_t[k] = cosine(G.mean_gradient(), gm)
    # a rank correlation over a (numerically) constant series is undefined
    degenerate = bool(np.ptp(inv_r) <= 1e-9 or np.ptp(cos_t) <= 1e-9)
    rho = None
    if not degenerate:
        rho = float(stats.spearmanr(inv_r, cos_t).statistic)
    return CorrelationReport(
        n_samples=n_samples,
        spearman_rho=rho,
        inv_ratio_range=(float(inv_r.min()), float(inv_r.max())),
        cos_theta_range=(float(cos_t.min()), float(cos_t.max())),
        degenerate=degenerate,
    )


def pareto_failure_census(stream: list[TaskGradientSet],
                          combiners: dict) -> dict[str, dict[str, int]]:
    """Count Pareto failures per combiner over one shared gradient stream.

    combiners maps a label to a stateful callable; each combiner sees the
    identical stream (paired design). Skipped Nash-family steps are tallied
    separately and excluded from the failure count, so the count reflects the
    solver's own directions rather than the reuse fallback.
    """
    out = {}
    for label, comb in combiners.items():
        failures = 0
        skips = 0
        for G in stream:
            res = comb(G)
            if res.skipped:
                skips += 1
            elif res.pareto_failure:
                failures += 1
        out[label] = {"pareto_failures": failures, "skipped": skips,
                      "steps": len(stream)}
    return out
