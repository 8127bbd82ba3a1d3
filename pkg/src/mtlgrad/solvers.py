"""Inner solvers: simplex projection, min-norm point, the simplex objective
used by the conflict-averse family, and the Nash fixed-point system.

All solvers are stateless and operate on the K x K Gram matrix, so their cost
is independent of the parameter dimension once the Gram is formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import NonFinite, PositiveWeights, SimplexWeights, TaskGradientSet, gram


class SkipSignal(Exception):
    """Raised when the Nash solver hits a conflicting/non-convergent instance.

    Callers reuse the previous step's weights, mirroring the official
    skip-on-conflict behavior.
    """


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_iters: int = 1000
    damping: float = 0.5

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must be in (0, 1]")


DEFAULT_SOLVER = SolverConfig()


def simplex_project(v) -> SimplexWeights:
    """Euclidean projection onto the probability simplex (sort-and-threshold)."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NonFinite("cannot project a non-finite vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    cond = u - css / idx > 0
    rho = int(np.nonzero(cond)[0][-1])
    tau = css[rho] / (rho + 1)
    w = np.maximum(v - tau, 0.0)
    w /= w.sum()  # renormalize against rounding
    return SimplexWeights(w)


def _project_simplex_raw(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = int(np.nonzero(u - css / idx > 0)[0][-1])
    tau = css[rho] / (rho + 1)
    return np.maximum(v - tau, 0.0)


def _mgda_gamma_2task(m11: float, m12: float, m22: float) -> float:
    """Closed-form weight of the first task for the two-task min-norm point.

    Minimizes ||gamma*g1 + (1-gamma)*g2|| over gamma in [0, 1] given the Gram
    entries.
    """
    denom = m11 - 2.0 * m12 + m22  # ||g1 - g2||^2
    if denom <= 0.0:
        return 0.5
    gamma = (m22 - m12) / denom
    return min(1.0, max(0.0, gamma))


def _minnorm_exact(M: np.ndarray) -> tuple[np.ndarray, int]:
    """Min-norm weights over the simplex by exact face enumeration.

    For each candidate support S, the interior stationary point on that face
    solves [M_S 1; 1' 0] [w; lam] = [0; 1]; the best feasible candidate is the
    global minimizer because the optimal support is always among them.
    """
    K = M.shape[0]
    best_w = None
    best_val = math.inf
    solved = 0
    for mask in range(1, 1 << K):
        idx = [i for i in range(K) if mask >> i & 1]
        n = len(idx)
        A = np.zeros((n + 1, n + 1))
        A[:n, :n] = M[np.ix_(idx, idx)]
        A[:n, n] = 1.0
        A[n, :n] = 1.0
        rhs = np.zeros(n + 1)
        rhs[n] = 1.0
        sol, residual, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
        ws = sol[:n]
        # reject inconsistent (rank-deficient) or infeasible supports
        if abs(float(ws.sum()) - 1.0) > 1e-9 or np.any(ws < -1e-12):
            continue
        solved += 1
        ws = np.maximum(ws, 0.0)
        ws /= ws.sum()
        val = float(ws @ M[np.ix_(idx, idx)] @ ws)
        if val < best_val - 1e-15:
            best_val = val
            best_w = np.zeros(K)
            best_w[idx] = ws
    if best_w is None:
        best_w = np.full(K, 1.0 / K)
    return best_w, solved


def mgda_minnorm(G: TaskGradientSet, cfg: SolverConfig = DEFAULT_SOLVER,
                 with_iters: bool = False):
    """Weights of the min-norm point of the task gradients over the simplex.

    Two tasks use the closed form on the segment. Up to 12 tasks the optimal
    face is found exactly by enumerating support sets and solving the
    equality-constrained Gram system on each. Larger instances fall back to
    projected gradient descent with backtracking, stopping on the duality gap
    (which directly bounds the KKT slack).
    """
    M = gram(G)
    K = G.num_tasks
    if K == 2:
        gamma = _mgda_gamma_2task(M[0, 0], M[0, 1], M[1, 1])
        w = SimplexWeights(np.array([gamma, 1.0 - gamma]))
        return (w, 0) if with_iters else w
    if K <= 12:
        w, iters = _minnorm_exact(M)
        out = SimplexWeights(w)
        return (out, iters) if with_iters else out

    w = np.full(K, 1.0 / K)
    f = 0.5 * float(w @ M @ w)
    step = 1.0
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        Mw = M @ w
        # duality gap for min 0.5 w'Mw over the simplex: grad'(w - e_t)
        gap = float(Mw @ w - Mw.min())
        if gap <= cfg.tol:
            break
        step = min(step * 2.0, 1e8)
        while True:
            cand = _project_simplex_raw(w - step * Mw)
            fc = 0.5 * float(cand @ M @ cand)
            if fc <= f - 1e-4 * float(Mw @ (w - cand)) or step < 1e-16:
                break
            step *= 0.5
        w, f = cand, fc
    w = np.maximum(w, 0.0)
    w /= w.sum()
    out = SimplexWeights(w)
    return (out, iters) if with_iters else out


def _cagrad_objective_k2(q1: float, q2: float, m11: float, m12: float,
                         m22: float, a: float, b: float, tol: float,
                         max_iters: int, squared: bool) -> tuple[float, int]:
    """Scalar projected-gradient path for the two-task simplex objective.

    Same algorithm as the generic path (projected gradient with backtracking,
    subgradient 0 at ||g_w|| = 0) specialized to gamma in [0, 1]; the matrix
    runs call this millions of times, so it stays in plain floats.
    """
    dq = q1 - q2
    # s(gamma) = ||g_w||^2 coefficients: s = A*gamma^2 + B*gamma + C
    A = m11 - 2.0 * m12 + m22
    B = 2.0 * (m12 - m22)
    C = m22
    gamma = 0.5
    step = 1.0
    it = 0

    def fval(g: float) -> float:
        s = max((A * g + B) * g + C, 0.0)
        pen = s if squared else math.sqrt(s)
        return a * (g * dq + q2) + b * pen

    f = fval(gamma)
    for it in range(1, max_iters + 1):
        s = max((A * gamma + B) * gamma + C, 0.0)
        ds = 2.0 * A * gamma + B
        if squared:
            grad = a * dq + b * ds
        else:
            ns = math.sqrt(s)
            grad = a * dq + (b * ds / (2.0 * ns) if ns > 0.0 else 0.0)
        # unit-step projected-gradient norm is the stationarity measure
        if abs(gamma - min(1.0, max(0.0, gamma - grad))) <= tol:
            break
        # backtracking from the last accepted step, allowed to grow
        step = min(step * 2.0, 1e8)
        while True:
            cand = min(1.0, max(0.0, gamma - step * grad))
            fc = fval(cand)
            if fc <= f - 1e-4 * (gamma - cand) * grad or step < 1e-16:
                break
            step *= 0.5
        gamma, f = cand, fc
    return gamma, it


def minimize_cagrad_family(G: TaskGradientSet, a: float, b: float,
                           cfg: SolverConfig = DEFAULT_SOLVER,
                           squared: bool = False,
                           with_iters: bool = False):
    """Minimize a * (g_w . g_0) + b * ||g_w|| over the simplex.

    With squared=True the second term is b * ||g_w||^2 instead. Uses projected
    gradient descent with backtracking line search; the subgradient of the
    norm at g_w = 0 is taken as 0. Ties (constant objectives) resolve to the
    uniform initial point.
    """
    if a < 0 or b < 0 or a + b <= 0:
        raise ValueError("need a >= 0, b >= 0, a + b > 0")
    M = gram(G)
    K = G.num_tasks
    q = M.mean(axis=1)  # q_i = g_i . g_0

    if K == 2:
        gamma, iters = _cagrad_objective_k2(
            float(q[0]), float(q[1]), float(M[0, 0]), float(M[0, 1]),
            float(M[1, 1]), a, b, cfg.tol, cfg.max_iters, squared)
        out = SimplexWeights(np.array([gamma, 1.0 - gamma]))
        return (out, iters) if with_iters else out

    def fval(w: np.ndarray) -> float:
        s = float(w @ M @ w)
        pen = s if squared else math.sqrt(max(s, 0.0))
        return a * float(q @ w) + b * pen

    w = np.full(K, 1.0 / K)
    f = fval(w)
    step = 1.0
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        Mw = M @ w
        s = float(w @ Mw)
        if squared:
            grad = a * q + 2.0 * b * Mw
        else:
            ns = math.sqrt(max(s, 0.0))
            grad = a * q + (b * Mw / ns if ns > 0.0 else 0.0)
        if float(np.linalg.norm(w - _project_simplex_raw(w - grad))) <= cfg.tol:
            break
        step = min(step * 2.0, 1e8)
        while True:
            cand = _project_simplex_raw(w - step * grad)
            fc = fval(cand)
            if fc <= f - 1e-4 * float(grad @ (w - cand)) or step < 1e-16:
                break
            step *= 0.5
        w, f = cand, fc
    w = np.maximum(w, 0.0)
    w /= w.sum()
    out = SimplexWeights(w)
    return (out, iters) if with_iters else out


def nash_weights(G: TaskGradientSet, cfg: SolverConfig = DEFAULT_SOLVER,
                 with_iters: bool = False):
    """Solve the Nash bargaining first-order condition (GG'w)_i = 1/w_i.

    Damped fixed-point iteration on the Gram system; raises SkipSignal when an
    iterate hits a nonpositive (GG'w)_i or the iteration budget runs out, so
    the caller can fall back to the previous step's weights.
    """
    M = gram(G)
    K = G.num_tasks
    w = np.full(K, 1.0 / K)
    eps = 1e-12
    for iters in range(1, cfg.max_iters + 1):
        Mw = M @ w
        if np.any(Mw <= 0.0):
            raise SkipSignal("nonpositive projected norms; conflicting tasks")
        resid = float(np.max(np.abs(w * Mw - 1.0)))
        if resid <= cfg.tol:
            out = PositiveWeights(w)
            return (out, iters) if with_iters else out
        w = (1.0 - cfg.damping) * w + cfg.damping / np.maximum(Mw, eps)
    raise SkipSignal("fixed point did not converge")
