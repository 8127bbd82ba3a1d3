"""Synthetic two-task benchmark: objective formulas, analytic gradients,
canonical initial points and weighting presets, and a brute-force grid oracle
for the global optimum of the weighted loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import TaskGradientSet

_FLOOR = 5e-6


@dataclass(frozen=True)
class ToyWeighting:
    a1: float
    a2: float

    def __post_init__(self):
        if self.a1 < 0 or self.a2 < 0:
            raise ValueError("weights must be nonnegative")
        if abs(self.a1 + self.a2 - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.a2])


@dataclass(frozen=True)
class GridOracleResult:
    theta_star: tuple[float, float]
    loss_star: float
    grid_step: float
    bounds: tuple[float, float, float, float]  # (x_lo, x_hi, y_lo, y_hi)


def toy_losses(theta) -> tuple[float, float]:
    """Evaluate the two task losses at a point.

    The two objectives blend a log-valley region (active for positive second
    coordinate) with a pair of shifted quadratic bowls (active for negative
    second coordinate); the floor inside the log keeps everything finite.
    """
    t1, t2 = float(theta[0]), float(theta[1])
    f1 = math.log(max(abs(-0.5 * t1 - 3.5 - math.tanh(t2)), _FLOOR)) + 6.0
    f2 = math.log(max(abs(-0.5 * t1 + 3.5 - math.tanh(t2)), _FLOOR)) + 6.0
    g1 = ((-t1 + 7.0) ** 2 + 0.1 * (-t2 - 8.0) ** 2) / 10.0 - 20.0
    g2 = ((-t1 - 7.0) ** 2 + 0.1 * (-t2 - 8.0) ** 2) / 10.0 - 20.0
    c1 = max(math.tanh(0.5 * t2), 0.0)
    c2 = max(math.tanh(-0.5 * t2), 0.0)
    return c1 * f1 + c2 * g1, c1 * f2 + c2 * g2


def toy_losses_grid(T1: np.ndarray, T2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized toy_losses over coordinate arrays (used by the grid oracle)."""
    u1 = -0.5 * T1 - 3.5 - np.tanh(T2)
    u2 = -0.5 * T1 + 3.5 - np.tanh(T2)
    f1 = np.log(np.maximum(np.abs(u1), _FLOOR)) + 6.0
    f2 = np.log(np.maximum(np.abs(u2), _FLOOR)) + 6.0
    g1 = ((-T1 + 7.0) ** 2 + 0.1 * (-T2 - 8.0) ** 2) / 10.0 - 20.0
    g2 = ((-T1 - 7.0) ** 2 + 0.1 * (-T2 - 8.0) ** 2) / 10.0 - 20.0
    c1 = np.maximum(np.tanh(0.5 * T2), 0.0)
    c2 = np.maximum(np.tanh(-0.5 * T2), 0.0)
    return c1 * f1 + c2 * g1, c1 * f2 + c2 * g2


def toy_gradients(theta) -> TaskGradientSet:
    """Analytic gradients of the two task losses (2 x 2 gradient matrix).

    Kink conventions: the derivative of max(., 0) at 0 is 0, the derivative
    of |.| at 0 is 0, and the derivative through an active log floor is 0.
    """
    t1, t2 = float(theta[0]), float(theta[1])
    th = math.tanh(t2)
    sech2 = 1.0 - th * th
    u1 = -0.5 * t1 - 3.5 - th
    u2 = -0.5 * t1 + 3.5 - th
    f1 = math.log(max(abs(u1), _FLOOR)) + 6.0
    f2 = math.log(max(abs(u2), _FLOOR)) + 6.0
    # d/du ln(max(|u|, floor)) = 1/u outside the floor, 0 inside or at 0
    inv1 = 1.0 / u1 if abs(u1) > _FLOOR else 0.0
    inv2 = 1.0 / u2 if abs(u2) > _FLOOR else 0.0
    df1 = (-0.5 * inv1, -sech2 * inv1)
    df2 = (-0.5 * inv2, -sech2 * inv2)
    g1 = ((-t1 + 7.0) ** 2 + 0.1 * (-t2 - 8.0) ** 2) / 10.0 - 20.0
    g2 = ((-t1 - 7.0) ** 2 + 0.1 * (-t2 - 8.0) ** 2) / 10.0 - 20.0
    dg1 = ((t1 - 7.0) / 5.0, (t2 + 8.0) / 50.0)
    dg2 = ((t1 + 7.0) / 5.0, (t2 + 8.0) / 50.0)
    th_half = math.tanh(0.5 * t2)
    sech2_half = 1.0 - th_half * th_half
    c1 = max(th_half, 0.0)
    c2 = max(-th_half, 0.0)
    # At the gating kink (second coordinate exactly 0) both sided derivatives
    # are kept so the crossover point is not falsely stationary.
    dc1 = 0.5 * sech2_half if th_half >= 0.0 else 0.0
    dc2 = -0.5 * sech2_half if th_half <= 0.0 else 0.0
    rows = np.array([
        [c1 * df1[0] + c2 * dg1[0],
         c1 * df1[1] + c2 * dg1[1] + dc1 * f1 + dc2 * g1],
        [c1 * df2[0] + c2 * dg2[0],
         c1 * df2[1] + c2 * dg2[1] + dc1 * f2 + dc2 * g2],
    ])
    return TaskGradientSet(rows)


def init_points() -> list[tuple[float, float]]:
    """The five canonical starting points for the trajectory comparisons."""
    return [(-8.5, 7.5), (-8.5, 5.0), (0.0, 0.0), (9.0, 9.0), (10.0, -8.0)]


def init_points_small() -> list[tuple[float, float]]:
    """The three-point subset used for the balanced-weighting panels."""
    return [(-8.5, 7.5), (0.0, 8.0), (5.0, 9.0)]


def weight_presets() -> list[ToyWeighting]:
    return [ToyWeighting(0.1, 0.9), ToyWeighting(0.3, 0.7),
            ToyWeighting(0.5, 0.5), ToyWeighting(0.7, 0.3),
            ToyWeighting(0.9, 0.1)]


DEFAULT_BOUNDS = (-12.0, 12.0, -12.0, 12.0)


def grid_oracle(w: ToyWeighting, bounds=DEFAULT_BOUNDS,
                step: float = 0.01) -> GridOracleResult:
    """Brute-force global optimum of a1*L1 + a2*L2 on a rectangular grid.

    One coarse exhaustive pass, then a 10x finer local pass around the
    incumbent.
    """
    x_lo, x_hi, y_lo, y_hi = bounds

    def best_on(xs, ys):
        T1, T2 = np.meshgrid(xs, ys, indexing="ij")
        L1, L2 = toy_losses_grid(T1, T2)
        L = w.a1 * L1 + w.a2 * L2
        i, j = np.unravel_index(np.argmin(L), L.shape)
        return float(xs[i]), float(ys[j]), float(L[i, j])

    xs = np.arange(x_lo, x_hi + step / 2, step)
    ys = np.arange(y_lo, y_hi + step / 2, step)
    bx, by, bl = best_on(xs, ys)

    fine = step / 10.0
    xs = np.arange(max(x_lo, bx - step), min(x_hi, bx + step) + fine / 2, fine)
    ys = np.arange(max(y_lo, by - step), min(y_hi, by + step) + fine / 2, fine)
    fx, fy, fl = best_on(xs, ys)
    if fl < bl:
        bx, by, bl = fx, fy, fl
    return GridOracleResult(theta_star=(bx, by), loss_star=bl,
                            grid_step=step, bounds=bounds)


_FIXTURE_PATH = Path(__file__).parent / "data" / "oracle_fixtures.txt"


def load_oracle_fixtures(path: Path = _FIXTURE_PATH) -> dict[tuple[float, float], GridOracleResult]:
    """Frozen oracle optima for the preset weightings, keyed by (a1, a2).

    Format: one `a1 a2 theta1 theta2 loss` line per weighting.
    """
    out = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        a1, a2, t1, t2, loss = (float(x) for x in line.split())
        out[(a1, a2)] = GridOracleResult(theta_star=(t1, t2), loss_star=loss,
                                         grid_step=0.01, bounds=DEFAULT_BOUNDS)
    return out


def oracle_loss(w: ToyWeighting) -> float:
    """Oracle optimum for a weighting, from the frozen fixtures when
    available, otherwise computed on the fly."""
    fixtures = load_oracle_fixtures() if _FIXTURE_PATH.exists() else {}
    key = (w.a1, w.a2)
    if key in fixtures:
        return fixtures[key].loss_star
    return grid_oracle(w).loss_star


class ToyObjective:
    """Adapter exposing the weighted two-task problem to the runner."""

    num_tasks = 2

    def __init__(self, weighting: ToyWeighting):
        self.weighting = weighting

    def losses(self, theta) -> np.ndarray:
        l1, l2 = toy_losses(theta)
        return np.array([self.weighting.a1 * l1, self.weighting.a2 * l2])

    def gradients(self, theta) -> TaskGradientSet:
        G = toy_gradients(theta)
        return TaskGradientSet(self.weighting.as_array()[:, None] * G.rows)
