"""Shared numeric types and elementary vector operations.

Everything here is a pure function on immutable values; all arithmetic is
float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ZeroVector(ValueError):
    """A vector with zero norm was passed where a direction is required."""


class NonFinite(ValueError):
    """An input contains NaN or infinity."""


def _as_readonly_f64(a) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TaskGradientSet:
    """K task gradients stacked as rows of a (K, m) float64 matrix."""

    rows: np.ndarray

    def __post_init__(self):
        rows = _as_readonly_f64(self.rows)
        if rows.ndim != 2:
            raise ValueError(f"expected a 2-d gradient matrix, got shape {rows.shape}")
        if rows.shape[0] < 2:
            raise ValueError("need at least two task gradients")
        if rows.shape[1] < 1:
            raise ValueError("gradient dimension must be at least 1")
        if not np.all(np.isfinite(rows)):
            raise NonFinite("gradient matrix contains NaN or infinity")
        object.__setattr__(self, "rows", rows)

    @property
    def num_tasks(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def mean_gradient(self) -> np.ndarray:
        """The linear-scalarization direction: the unweighted row mean."""
        return self.rows.mean(axis=0)

    def row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.rows, axis=1)

    def combine(self, w: np.ndarray) -> np.ndarray:
        """Weighted gradient: sum_i w_i * g_i."""
        return np.asarray(w, dtype=np.float64) @ self.rows


@dataclass(frozen=True)
class SimplexWeights:
    """Combination weights on the probability simplex."""

    w: np.ndarray

    def __post_init__(self):
        w = _as_readonly_f64(self.w)
        if w.ndim != 1:
            raise ValueError("weights must be a 1-d vector")
        if np.any(w < 0):
            raise ValueError("simplex weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError(f"simplex weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "w", w)

    def __len__(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class PositiveWeights:
    """Strictly positive, unnormalized combination weights (Nash family)."""

    w: np.ndarray

    def __post_init__(self):
        w = _as_readonly_f64(self.w)
        if w.ndim != 1:
            raise ValueError("weights must be a 1-d vector")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be strictly positive and finite")
        object.__setattr__(self, "w", w)

    def __len__(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class CombineOutcome:
    """Combined direction plus solver diagnostics."""

    d: np.ndarray
    weights: SimplexWeights | PositiveWeights
    pareto_failure: bool
    mu: float | None = None
    cos_theta: float | None = None
    skipped: bool = False
    solver_iters: int = 0

    def __post_init__(self):
        object.__setattr__(self, "d", _as_readonly_f64(self.d))


def cosine(u, v) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1].

    Raises ZeroVector for degenerate inputs; callers decide the policy for
    zero-norm gradients explicitly.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine of a zero-norm vector is undefined")
    c = float(u @ v) / (nu * nv)
    return min(1.0, max(-1.0, c))


def gram(G: TaskGradientSet) -> np.ndarray:
    """The K x K matrix of pairwise dot products g_i . g_j."""
    return G.rows @ G.rows.T


def direction_harms_some_task(d: np.ndarray, G: TaskGradientSet) -> bool:
    """True iff d has negative cosine with some nonzero task gradient.

    A zero direction is treated as stationary, never as a failure; "zero"
    includes rounding residue below 1e-12 of the largest gradient norm, so a
    Pareto-stationary combination that cancels to noise is not flagged.
    """
    d = np.asarray(d, dtype=np.float64)
    norms = G.row_norms()
    if float(np.linalg.norm(d)) <= 1e-12 * float(norms.max()):
        return False
    dots = G.rows @ d
    nonzero = norms > 0
    return bool(np.any(dots[nonzero] < 0))
