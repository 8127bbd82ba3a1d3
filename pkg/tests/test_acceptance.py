"""End-to-end acceptance suite.

Each test prints one PASS/FAIL line for its criterion. The convergence
matrix, the most expensive artifact, is computed once per session and shared.
"""

import json

import numpy as np
import pytest

from mtlgrad.cli import main as cli_main
from mtlgrad.combiners import CombinerConfig, estimate_mu, make_combiner
from mtlgrad.core import TaskGradientSet, gram
from mtlgrad.metrics import (
    correlation_study,
    delta_m,
    pareto_failure_census,
    sample_imbalanced_pair,
)
from mtlgrad.runner import (
    OptimizerConfig,
    QuadraticTwoTask,
    descent_bound_audit,
    run_trajectory,
)
from mtlgrad.seeding import splitmix64
from mtlgrad.solvers import (
    DEFAULT_SOLVER,
    SkipSignal,
    mgda_minnorm,
    minimize_cagrad_family,
    nash_weights,
)
from mtlgrad.toybench import ToyObjective, init_points, oracle_loss, \
    toy_gradients, toy_losses, weight_presets

FROZEN_C = 0.4
GAP_TOL = 1e-2


def report(criterion, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    print(f"\n[ACCEPTANCE {criterion}] {tag} {detail}")
    assert ok, f"criterion {criterion}: {detail}"


class ConstraintAudit:
    """Per-step check of ||d - g0|| = c ||g0|| on a trust-region combiner."""

    def __init__(self, inner, c):
        self.inner = inner
        self.c = c
        self.method = inner.method
        self.family = inner.family
        self.max_violation = 0.0

    def __call__(self, G):
        out = self.inner(G)
        g0 = G.mean_gradient()
        n0 = float(np.linalg.norm(g0))
        diff = float(np.linalg.norm(out.d - g0))
        if diff > 0.0 and n0 > 0.0:  # the solved-weights branch was taken
            self.max_violation = max(self.max_violation,
                                     abs(diff - self.c * n0))
        return out

    def reset(self):
        self.inner.reset()


@pytest.fixture(scope="module")
def matrix():
    """The frozen-config convergence matrix for ls/pcgrad/cagrad/imgrad,
    with the trust-region constraint audited on every step."""
    opt = OptimizerConfig(kind="adam", lr=2e-3, steps=50000)
    rows = []
    max_violation = 0.0
    for method in ("ls", "pcgrad", "cagrad", "imgrad"):
        for w in weight_presets():
            oracle = oracle_loss(w)
            for init in init_points():
                comb = make_combiner(method, CombinerConfig(c=FROZEN_C))
                if method in ("cagrad", "imgrad"):
                    comb = ConstraintAudit(comb, FROZEN_C)
                tr = run_trajectory(ToyObjective(w), comb, opt, init)
                gap = float(tr.losses[-1].sum()) - oracle
                rows.append({"method": method, "w": (w.a1, w.a2),
                             "init": init, "gap": gap,
                             "converged": gap <= GAP_TOL})
                if isinstance(comb, ConstraintAudit):
                    max_violation = max(max_violation, comb.max_violation)
    return {"rows": rows, "max_violation": max_violation}


def test_criterion_1_toy_convergence_matrix(matrix):
    rows = matrix["rows"]
    imgrad_bad = [r for r in rows
                  if r["method"] == "imgrad" and not r["converged"]]
    extreme = {(0.9, 0.1), (0.1, 0.9)}
    baseline_ok = all(
        any(r["w"] in extreme and not r["converged"]
            for r in rows if r["method"] == m)
        for m in ("ls", "pcgrad", "cagrad"))
    ok = not imgrad_bad and baseline_ok
    detail = (f"imgrad non-converged cells: "
              f"{[(r['w'], r['init'], round(r['gap'], 4)) for r in imgrad_bad]}; "
              f"ls/pcgrad/cagrad fail an extreme-weighting cell: {baseline_ok}")
    report(1, ok, detail)


def test_criterion_2_mgda_oracle_equivalence():
    rng = np.random.default_rng(splitmix64(0, 2))
    kkt_bad = 0
    closed_bad = 0
    for _ in range(1000):
        K = int(rng.integers(2, 6))
        m = int(rng.integers(1, 21))
        G = TaskGradientSet(rng.normal(size=(K, m)))
        w = mgda_minnorm(G, DEFAULT_SOLVER)
        gw = G.combine(w.w)
        sq = float(gw @ gw)
        if not (np.all(G.rows @ gw >= sq - 1e-6)
                and np.linalg.norm(gw) <= G.row_norms().min() + 1e-9):
            kkt_bad += 1
        if K == 2:
            g1, g2 = G.rows
            denom = float((g1 - g2) @ (g1 - g2))
            gamma = 0.5 if denom == 0.0 else float(
                np.clip((g2 - g1) @ g2 / denom, 0.0, 1.0))
            if abs(w.w[0] - gamma) > 1e-8:
                closed_bad += 1
    ok = kkt_bad == 0 and closed_bad == 0
    report(2, ok, f"KKT/norm violations {kkt_bad}/1000, "
                  f"closed-form mismatches {closed_bad}")


def test_criterion_3_trust_region_constraint(matrix):
    v = matrix["max_violation"]
    report(3, v <= 1e-6, f"max | ||d-g0|| - c||g0|| | = {v:.3g}")


def _simplex_grid(K, step=1e-3):
    g = np.arange(0.0, 1.0 + step / 2, step)
    if K == 2:
        return np.stack([g, 1.0 - g], axis=1)
    pts = []
    for w1 in g:
        w2 = np.arange(0.0, 1.0 - w1 + step / 2, step)
        pts.append(np.stack([np.full_like(w2, w1), w2, 1.0 - w1 - w2],
                            axis=1))
    return np.concatenate(pts)


def test_criterion_4_simplex_objective_oracle():
    rng = np.random.default_rng(splitmix64(0, 4))
    grids = {K: _simplex_grid(K) for K in (2, 3)}
    worst = 0.0
    for _ in range(200):
        K = int(rng.integers(2, 4))
        G = TaskGradientSet(rng.normal(size=(K, int(rng.integers(2, 10)))))
        a = float(rng.uniform(0.0, 1.0))
        b = float(rng.uniform(0.0, 1.0))
        if a + b == 0.0:
            a = 1.0
        w = minimize_cagrad_family(G, a, b, DEFAULT_SOLVER)
        M = gram(G)
        q = M.mean(axis=1)
        W = grids[K]
        s = np.einsum("ij,jk,ik->i", W, M, W)
        fgrid = float((a * (W @ q) + b * np.sqrt(np.maximum(s, 0.0))).min())
        fsol = a * float(q @ w.w) + b * float(np.linalg.norm(G.combine(w.w)))
        worst = max(worst, fsol - fgrid)
    report(4, worst <= 1e-5, f"worst objective gap vs 1e-3 grid = {worst:.3g}")


def test_criterion_5_gradient_check():
    rng = np.random.default_rng(splitmix64(0, 5))
    h = 1e-6
    worst = 0.0
    checked = 0
    while checked < 100:
        t1, t2 = rng.uniform(-10.0, 10.0, size=2)
        if abs(t2) < 1e-3:
            continue
        u1 = -0.5 * t1 - 3.5 - np.tanh(t2)
        u2 = -0.5 * t1 + 3.5 - np.tanh(t2)
        if min(abs(u1), abs(u2)) < 1e-3:
            continue
        checked += 1
        analytic = toy_gradients((t1, t2)).rows
        numeric = np.zeros((2, 2))
        for j, e in enumerate(((h, 0.0), (0.0, h))):
            lp = np.array(toy_losses((t1 + e[0], t2 + e[1])))
            lm = np.array(toy_losses((t1 - e[0], t2 - e[1])))
            numeric[:, j] = (lp - lm) / (2.0 * h)
        scale = np.maximum(np.abs(numeric), 1.0)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / scale)))
    report(5, worst < 1e-4, f"max relative error over 100 points = {worst:.3g}")


def test_criterion_6_mu_range_and_correlation():
    rng = np.random.default_rng(splitmix64(0, 6))
    range_ok = True
    for _ in range(1000):
        G = TaskGradientSet(rng.normal(size=(int(rng.integers(2, 5)),
                                             int(rng.integers(2, 12)))))
        if np.linalg.norm(G.mean_gradient()) == 0.0:
            continue
        mu = estimate_mu(G, "PM")
        if not 0.0 <= mu <= 1.0:
            range_ok = False
    study = correlation_study(1000, seed=0)
    rho = study.spearman_rho
    ok = range_ok and rho is not None and rho > 0.3
    report(6, ok, f"PM-mu in [0,1]: {range_ok}; Spearman rho = "
                  f"{rho if rho is None else round(rho, 4)} (require > 0.3)")


def test_criterion_7_nash_first_order_condition():
    rng = np.random.default_rng(splitmix64(0, 7))
    bad = 0
    solved = 0
    for _ in range(1000):
        G = TaskGradientSet(rng.normal(size=(int(rng.integers(2, 5)),
                                             int(rng.integers(2, 10)))))
        try:
            w = nash_weights(G, DEFAULT_SOLVER)
        except SkipSignal:
            continue
        solved += 1
        resid = w.w * (gram(G) @ w.w) - 1.0
        d = G.combine(w.w)
        harms = bool(np.any(G.rows @ d < 0.0))
        if np.max(np.abs(resid)) > 1e-6 or harms:
            bad += 1
    report(7, bad == 0 and solved > 0,
           f"{solved} solved instances, {bad} first-order/Pareto violations")


def test_criterion_8_pareto_failure_census():
    rng = np.random.default_rng(splitmix64(0, 3))
    stream = [sample_imbalanced_pair(rng, ratio_range=(10.0, 100.0))
              for _ in range(1000)]
    combiners = {m: make_combiner(m)
                 for m in ("pcgrad", "cagrad", "imgrad", "nash",
                           "imgrad-nash")}
    counts = pareto_failure_census(stream, combiners)
    pf = {m: counts[m]["pareto_failures"] for m in counts}
    ok = (pf["pcgrad"] == 0 and pf["imgrad-nash"] <= pf["nash"]
          and pf["imgrad"] <= pf["cagrad"])
    report(8, ok, f"counts {pf}")


def test_criterion_9_descent_bound_audit():
    obj = QuadraticTwoTask((1.0, 0.0), (-1.0, 0.0))
    opt = OptimizerConfig(kind="gd", lr=0.1, steps=1000)
    violations = {}
    for method in ("cagrad", "imgrad"):
        tr = run_trajectory(obj, make_combiner(method,
                                               CombinerConfig(c=FROZEN_C)),
                            opt, (0.0, 1.0))
        rep = descent_bound_audit(tr, obj, c=FROZEN_C, alpha=0.1)
        violations[method] = len(rep.violations)
    ok = all(v == 0 for v in violations.values())
    report(9, ok, f"violations over 1000 steps: {violations}")


def test_criterion_10_delta_m_unit_suite():
    checks = [
        abs(delta_m([(80.0, 80.0, 1), (0.5, 0.5, 0)])) < 1e-12,
        abs(delta_m([(110.0, 100.0, 1)]) + 10.0) < 1e-9,
        abs(delta_m([(72.0, 80.0, 1), (0.45, 0.5, 0)])) < 1e-9,
    ]
    rng = np.random.default_rng(splitmix64(0, 10))
    for _ in range(50):
        n = int(rng.integers(2, 7))
        metrics = [(float(rng.uniform(0.1, 10)), float(rng.uniform(0.1, 10)),
                    int(rng.integers(0, 2))) for _ in range(n)]
        perm = [metrics[i] for i in rng.permutation(n)]
        checks.append(abs(delta_m(metrics) - delta_m(perm)) < 1e-9)
    ok = all(checks)
    report(10, ok, f"{sum(checks)}/{len(checks)} sub-checks passed")


def test_criterion_11_cli_determinism(tmp_path):
    def digest(path):
        return path.read_bytes()

    outputs = []
    for tag in ("a", "b"):
        base = tmp_path / tag
        base.mkdir()
        trace = base / "trace.csv"
        cli_main(["toy-run", "--method", "imgrad", "--steps", "60",
                  "--seed", "9", "--init=-8.5,7.5", "--weights", "0.9,0.1",
                  "--output", str(trace)])
        cli_main(["toy-matrix", "--methods", "ls,imgrad", "--steps", "30",
                  "--jobs", "1", "--out", str(base / "matrix.csv")])
        cli_main(["verify", "mgda", "--json", str(base / "mgda.json")])
        cli_main(["verify", "bounds", "--json", str(base / "bounds.json")])
        cli_main(["stats", str(trace), "--out-dir", str(base / "stats")])
        sidecar = json.loads((base / "trace.csv.json").read_text())
        sidecar["config"].pop("output", None)  # differs by tmp dir only
        outputs.append({
            "trace": digest(trace),
            "sidecar": json.dumps(sidecar, sort_keys=True),
            "matrix": digest(base / "matrix.csv"),
            "mgda": digest(base / "mgda.json"),
            "bounds": digest(base / "bounds.json"),
            "hist_mu": digest(base / "stats" / "hist_mu.csv"),
            "progress": digest(base / "stats" / "progress_trace.csv"),
        })
    mismatches = [k for k in outputs[0] if outputs[0][k] != outputs[1][k]]
    report(11, not mismatches,
           f"byte-identical artifacts across reruns; mismatches: {mismatches}")
