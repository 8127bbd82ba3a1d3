"""Command-line front end: trajectory runs, the convergence matrix,
verification suites, and trace statistics, all exported as CSV/JSON."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .combiners import (
    MU_MODES,
    OBJECTIVE_VARIANTS,
    CombinerConfig,
    METHOD_NAMES,
    make_combiner,
)
from .core import TaskGradientSet, ZeroVector, cosine
from .metrics import (
    correlation_study,
    pareto_failure_census,
    sample_imbalanced_pair,
)
from .runner import (
    OPTIMIZER_KINDS,
    OptimizerConfig,
    QuadraticTwoTask,
    descent_bound_audit,
    run_trajectory,
)
from .seeding import splitmix64
from .solvers import DEFAULT_SOLVER, mgda_minnorm
from .toybench import (
    ToyObjective,
    ToyWeighting,
    init_points,
    oracle_loss,
    toy_gradients,
    toy_losses,
    weight_presets,
)

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

TRACE_HEADER = ("step,theta1,theta2,L1,L2,w1,w2,d1,d2,d_norm,r,cos_theta,"
                "pareto_fail,skipped")
MATRIX_HEADER = "method,a1,a2,init1,init2,final_loss,oracle_loss,gap,converged"

VERIFY_SUITES = ("mgda", "gradcheck", "correlation", "bounds", "census")


class ConfigError(ValueError):
    pass


def _fmt(x: float) -> str:
    """Floats rendered with 9 significant digits."""
    return format(float(x), ".9g")


@dataclass
class RunConfig:
    """One trajectory run: method, combiner knobs, optimizer, task weighting,
    start point, seed, and output path."""

    method: str = "imgrad"
    c: float = 0.4
    mu_mode: str = "PM"
    objective_variant: str = "alg1"
    optimizer: str = "adam"
    lr: float = 2e-3
    steps: int = 50000
    update_every: int = 1
    weights: tuple[float, float] = (0.5, 0.5)
    init: tuple[float, float] = (0.0, 0.0)
    seed: int = 0
    output: str = "trace.csv"

    def validate(self) -> None:
        if self.method not in METHOD_NAMES:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.optimizer not in OPTIMIZER_KINDS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        try:
            self.combiner_config()
            self.optimizer_config()
            self.weighting()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def combiner_config(self) -> CombinerConfig:
        return CombinerConfig(c=self.c, mu_mode=self.mu_mode,
                              objective_variant=self.objective_variant,
                              update_every=self.update_every, seed=self.seed)

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(kind=self.optimizer, lr=self.lr,
                               steps=self.steps)

    def weighting(self) -> ToyWeighting:
        return ToyWeighting(*self.weights)

    def echo(self) -> dict:
        return {
            "method": self.method, "c": self.c, "mu_mode": self.mu_mode,
            "objective_variant": self.objective_variant,
            "optimizer": self.optimizer, "lr": self.lr, "steps": self.steps,
            "update_every": self.update_every,
            "weights": list(self.weights), "init": list(self.init),
            "seed": self.seed, "output": self.output,
        }

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        known = set(cls().echo())
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls()
        for key, value in data.items():
            if key in ("weights", "init"):
                value = _pair(value, key)
            setattr(cfg, key, value)
        return cfg


def _pair(value, name: str) -> tuple[float, float]:
    if isinstance(value, str):
        parts = value.split(",")
    else:
        parts = list(value)
    if len(parts) != 2:
        raise ConfigError(f"{name} needs exactly two numbers")
    try:
        return (float(parts[0]), float(parts[1]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {name}: {value!r}") from exc


def _load_config(path: str | None, overrides: dict) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config document must be a flat object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig.from_mapping(data)
    cfg.validate()
    return cfg


def _write_trace_csv(path: Path, trace) -> None:
    rows = [TRACE_HEADER]
    n = trace.theta.shape[0]
    for t in range(n):
        rows.append(",".join([
            str(t),
            _fmt(trace.theta[t, 0]), _fmt(trace.theta[t, 1]),
            _fmt(trace.losses[t, 0]), _fmt(trace.losses[t, 1]),
            _fmt(trace.weights[t, 0]), _fmt(trace.weights[t, 1]),
            _fmt(trace.d[t, 0]), _fmt(trace.d[t, 1]),
            _fmt(trace.d_norm[t]), _fmt(trace.imbalance[t]),
            _fmt(trace.cos_theta[t]),
            str(int(trace.pareto_fail[t])), str(int(trace.skipped[t])),
        ]))
    path.write_text("\n".join(rows) + "\n")


def cmd_toy_run(args) -> int:
    overrides = {
        "method": args.method, "c": args.c, "mu_mode": args.mu_mode,
        "objective_variant": args.objective_variant,
        "optimizer": args.optimizer, "lr": args.lr, "steps": args.steps,
        "update_every": args.update_every, "weights": args.weights,
        "init": args.init, "seed": args.seed, "output": args.output,
    }
    cfg = _load_config(args.config, overrides)
    w = cfg.weighting()
    objective = ToyObjective(w)
    combiner = make_combiner(cfg.method, cfg.combiner_config())
    trace = run_trajectory(objective, combiner, cfg.optimizer_config(),
                           cfg.init)

    out = Path(cfg.output)
    _write_trace_csv(out, trace)
    final_loss = float(trace.losses[-1].sum()) if trace.losses.size else None
    oracle = oracle_loss(w)
    sidecar = {
        "config": cfg.echo(),
        "rows": int(trace.theta.shape[0]),
        "final_loss": final_loss,
        "oracle_loss": oracle,
        "oracle_gap": (None if final_loss is None
                       else final_loss - oracle),
        "error": trace.metadata.get("error"),
    }
    out.with_suffix(out.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    if trace.metadata.get("error"):
        print(f"aborted: {trace.metadata['error']}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"wrote {out} ({trace.theta.shape[0]} rows), "
          f"final loss {_fmt(final_loss)}, gap {_fmt(final_loss - oracle)}")
    return EXIT_OK


def _matrix_cell(task):
    """One (method, weighting, init) trajectory; worker-pool entry point."""
    method, a1, a2, init, lr, steps, optimizer, seed, c = task
    w = ToyWeighting(a1, a2)
    cfg = CombinerConfig(c=c, seed=seed)
    combiner = make_combiner(method, cfg)
    opt = OptimizerConfig(kind=optimizer, lr=lr, steps=steps)
    trace = run_trajectory(ToyObjective(w), combiner, opt, init)
    if trace.metadata.get("error") or trace.losses.size == 0:
        final = float("nan")
    else:
        final = float(trace.losses[-1].sum())
    oracle = oracle_loss(w)
    gap = final - oracle
    converged = bool(gap <= 1e-2) if math.isfinite(gap) else False
    return (method, a1, a2, init[0], init[1], final, oracle, gap, converged)


def _resolve_jobs(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("MTLGRAD_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"bad MTLGRAD_JOBS value {env!r}") from exc
    return os.cpu_count() or 1


def cmd_toy_matrix(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise ConfigError("need at least one method")
    for m in methods:
        if m not in METHOD_NAMES:
            raise ConfigError(f"unknown method {m!r}")
    jobs = _resolve_jobs(args.jobs)
    tasks = [(m, w.a1, w.a2, init, args.lr, args.steps, args.optimizer,
              args.seed, args.c)
             for m in methods
             for w in weight_presets()
             for init in init_points()]
    if jobs == 1:
        results = [_matrix_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_matrix_cell, tasks))
    # deterministic row order regardless of completion order
    results.sort(key=lambda r: (r[0], r[1], r[3], r[4]))
    rows = [MATRIX_HEADER]
    for method, a1, a2, i1, i2, final, oracle, gap, conv in results:
        rows.append(",".join([
            method, _fmt(a1), _fmt(a2), _fmt(i1), _fmt(i2),
            _fmt(final), _fmt(oracle), _fmt(gap),
            "true" if conv else "false",
        ]))
    Path(args.out).write_text("\n".join(rows) + "\n")
    n_conv = sum(1 for r in results if r[8])
    print(f"wrote {args.out}: {len(results)} cells, {n_conv} converged")
    return EXIT_OK


def _random_instance(rng: np.random.Generator) -> TaskGradientSet:
    K = int(rng.integers(2, 6))
    m = int(rng.integers(2, 21))
    return TaskGradientSet(rng.normal(size=(K, m)))


def _verify_mgda(seed: int) -> dict:
    rng = np.random.default_rng(splitmix64(seed, 0x01))
    failures = []
    n = 1000
    for k in range(n):
        G = _random_instance(rng)
        w = mgda_minnorm(G, DEFAULT_SOLVER)
        gw = G.combine(w.w)
        sq = float(gw @ gw)
        kkt_ok = bool(np.all(G.rows @ gw >= sq - 1e-6))
        norm_ok = float(np.linalg.norm(gw)) <= float(G.row_norms().min()) + 1e-9
        if not (kkt_ok and norm_ok):
            failures.append({"instance": k, "kkt": kkt_ok, "norm": norm_ok})
    return {"suite": "mgda", "instances": n, "failures": failures,
            "passed": not failures,
            "summary": f"KKT violations: {len(failures)} / {n}"}


def _verify_gradcheck(seed: int) -> dict:
    rng = np.random.default_rng(splitmix64(seed, 0x02))
    h = 1e-6
    worst = 0.0
    failures = []
    checked = 0
    while checked < 100:
        theta = rng.uniform(-10.0, 10.0, size=2)
        # stay away from the gating kink and the log-floor kinks
        if abs(theta[1]) < 1e-3:
            continue
        u1 = -0.5 * theta[0] - 3.5 - math.tanh(theta[1])
        u2 = -0.5 * theta[0] + 3.5 - math.tanh(theta[1])
        if min(abs(u1), abs(u2)) < 1e-3:
            continue
        checked += 1
        analytic = toy_gradients(theta).rows
        numeric = np.zeros((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            lp = np.array(toy_losses(theta + e))
            lm = np.array(toy_losses(theta - e))
            numeric[:, j] = (lp - lm) / (2.0 * h)
        scale = np.maximum(np.abs(numeric), 1.0)
        rel = float(np.max(np.abs(analytic - numeric) / scale))
        worst = max(worst, rel)
        if rel >= 1e-4:
            failures.append({"theta": theta.tolist(), "rel_err": rel})
    return {"suite": "gradcheck", "points": checked,
            "max_rel_err": worst, "failures": failures,
            "passed": not failures,
            "summary": f"max rel err {worst:.3g} over {checked} points"}


def _verify_correlation(seed: int) -> dict:
    report = correlation_study(1000, seed)
    lo, hi = report.cos_theta_range
    range_ok = 0.0 <= lo and hi <= 1.0
    rho = report.spearman_rho
    passed = (not report.degenerate) and range_ok and rho is not None \
        and rho > 0.3
    return {"suite": "correlation", "n_samples": report.n_samples,
            "spearman_rho": rho, "cos_theta_range": [lo, hi],
            "degenerate": report.degenerate, "passed": passed,
            "summary": f"rho = {rho:.4f} (require > 0.3)" if rho is not None
            else "degenerate series"}


def _verify_bounds(seed: int) -> dict:
    objective = QuadraticTwoTask((1.0, 0.0), (-1.0, 0.0))
    opt = OptimizerConfig(kind="gd", lr=0.1, steps=1000)
    details = {}
    passed = True
    for method in ("cagrad", "imgrad"):
        combiner = make_combiner(method, CombinerConfig(c=0.4, seed=seed))
        trace = run_trajectory(objective, combiner, opt, (0.0, 1.0))
        report = descent_bound_audit(trace, objective, c=0.4, alpha=0.1)
        details[method] = {"steps": report.steps_checked,
                           "violations": len(report.violations),
                           "loose_violations": len(report.loose_violations)}
        passed = passed and report.ok
    return {"suite": "bounds", "methods": details, "passed": passed,
            "summary": ", ".join(f"{m}: {d['violations']} violations"
                                 for m, d in details.items())}


def _verify_census(seed: int) -> dict:
    rng = np.random.default_rng(splitmix64(seed, 0x03))
    # the census stream is meant to be genuinely imbalanced, so the norm
    # ratios start at 10 rather than 1
    stream = [sample_imbalanced_pair(rng, ratio_range=(10.0, 100.0))
              for _ in range(1000)]
    cfg = CombinerConfig(seed=seed)
    combiners = {m: make_combiner(m, cfg)
                 for m in ("pcgrad", "cagrad", "imgrad", "nash",
                           "imgrad-nash")}
    counts = pareto_failure_census(stream, combiners)
    pf = {m: counts[m]["pareto_failures"] for m in counts}
    checks = {
        "pcgrad_zero": pf["pcgrad"] == 0,
        "imgrad_nash_le_nash": pf["imgrad-nash"] <= pf["nash"],
        "imgrad_le_cagrad": pf["imgrad"] <= pf["cagrad"],
    }
    return {"suite": "census", "counts": counts, "checks": checks,
            "passed": all(checks.values()),
            "summary": ", ".join(f"{m}={pf[m]}" for m in pf)}


_SUITE_FUNCS = {
    "mgda": _verify_mgda,
    "gradcheck": _verify_gradcheck,
    "correlation": _verify_correlation,
    "bounds": _verify_bounds,
    "census": _verify_census,
}


def cmd_verify(args) -> int:
    if args.suite != "all" and args.suite not in VERIFY_SUITES:
        raise ConfigError(f"unknown suite {args.suite!r}; "
                          f"choose from {VERIFY_SUITES} or 'all'")
    suites = VERIFY_SUITES if args.suite == "all" else (args.suite,)
    reports = []
    for suite in suites:
        report = _SUITE_FUNCS[suite](args.seed)
        status = "PASS" if report["passed"] else "FAIL"
        print(f"[{status}] {suite}: {report['summary']}")
        reports.append(report)
    if args.json:
        payload = reports[0] if len(reports) == 1 else {
            "passed": all(r["passed"] for r in reports), "suites": reports}
        Path(args.json).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if all(r["passed"] for r in reports) \
        else EXIT_VERIFY_FAIL


def _read_trace(path: Path) -> dict[str, np.ndarray]:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read trace {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != TRACE_HEADER:
        raise ConfigError(f"malformed trace {path}: bad header")
    cols = TRACE_HEADER.split(",")
    try:
        data = np.array([[float(x) for x in ln.split(",")]
                         for ln in lines[1:]])
    except ValueError as exc:
        raise ConfigError(f"malformed trace {path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(cols):
        raise ConfigError(f"malformed trace {path}: bad column count")
    return {name: data[:, j] for j, name in enumerate(cols)}


def _write_hist(path: Path, edges: np.ndarray, counts: np.ndarray) -> None:
    rows = ["bin_lo,bin_hi,count"]
    for k in range(counts.shape[0]):
        rows.append(f"{_fmt(edges[k])},{_fmt(edges[k + 1])},{int(counts[k])}")
    path.write_text("\n".join(rows) + "\n")


def cmd_stats(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    all_r, all_mu, all_sim = [], [], []
    for name in args.traces:
        path = Path(name)
        trace = _read_trace(path)
        r = trace["r"]
        all_r.append(r[np.isfinite(r)])
        mu = trace["cos_theta"]
        all_mu.append(mu[np.isfinite(mu)])
        for t1, t2 in zip(trace["theta1"], trace["theta2"]):
            G = toy_gradients((t1, t2))
            try:
                all_sim.append(cosine(G.rows[0], G.rows[1]))
            except ZeroVector:
                pass
        L = np.stack([trace["L1"], trace["L2"]], axis=1)
        initial = L[0]
        rows = ["step,r1,r2"]
        for t in range(L.shape[0]):
            vals = [str(int(trace["step"][t]))]
            for i in range(2):
                if initial[i] == 0.0:
                    vals.append("nan")
                else:
                    vals.append(_fmt(L[t, i] / initial[i]))
            rows.append(",".join(vals))
        (out_dir / f"progress_{path.stem}.csv").write_text(
            "\n".join(rows) + "\n")

    r_all = np.concatenate(all_r) if all_r else np.zeros(0)
    if r_all.size:
        r_cap = np.minimum(r_all, 100.0)
        counts, edges = np.histogram(r_cap, bins=50, range=(1.0, 100.0))
    else:
        counts, edges = np.zeros(50, dtype=int), np.linspace(1.0, 100.0, 51)
    _write_hist(out_dir / "hist_imbalance.csv", edges, counts)

    mu_all = np.concatenate(all_mu) if all_mu else np.zeros(0)
    mu_all = np.clip(mu_all, -1.0, 1.0)
    # bins cover [0, 1] only; anything below 0 lands in the first bin count
    counts, edges = np.histogram(np.maximum(mu_all, 0.0), bins=20,
                                 range=(0.0, 1.0))
    _write_hist(out_dir / "hist_mu.csv", edges, counts)

    sim_all = np.asarray(all_sim)
    counts, edges = np.histogram(sim_all, bins=40, range=(-1.0, 1.0))
    _write_hist(out_dir / "hist_similarity.csv", edges, counts)

    print(f"wrote stats for {len(args.traces)} trace(s) to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mtlgrad",
        description="Gradient-combination experiments on the synthetic "
                    "two-task benchmark.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("toy-run", help="run one trajectory, export a trace")
    run.add_argument("--config", help="JSON config file; flags override")
    run.add_argument("--method", choices=METHOD_NAMES)
    run.add_argument("--c", type=float)
    run.add_argument("--mu-mode", dest="mu_mode", choices=MU_MODES)
    run.add_argument("--objective-variant", dest="objective_variant",
                     choices=OBJECTIVE_VARIANTS)
    run.add_argument("--optimizer", choices=OPTIMIZER_KINDS)
    run.add_argument("--lr", type=float)
    run.add_argument("--steps", type=int)
    run.add_argument("--update-every", dest="update_every", type=int)
    run.add_argument("--weights", help="a1,a2 (nonnegative, sum to 1)")
    run.add_argument("--init", help="theta1,theta2 start point")
    run.add_argument("--seed", type=int)
    run.add_argument("--output", help="trace CSV path")
    run.set_defaults(func=cmd_toy_run)

    mat = sub.add_parser("toy-matrix",
                         help="weighting x init convergence matrix")
    mat.add_argument("--methods", default="imgrad",
                     help="comma-separated method list")
    mat.add_argument("--out", default="matrix.csv")
    mat.add_argument("--optimizer", choices=OPTIMIZER_KINDS, default="adam")
    mat.add_argument("--lr", type=float, default=2e-3)
    mat.add_argument("--steps", type=int, default=50000)
    mat.add_argument("--c", type=float, default=0.4)
    mat.add_argument("--seed", type=int, default=0)
    mat.add_argument("--jobs", type=int,
                     help="worker count (default: MTLGRAD_JOBS or CPUs)")
    mat.set_defaults(func=cmd_toy_matrix)

    ver = sub.add_parser("verify", help="run one verification suite")
    ver.add_argument("suite", choices=VERIFY_SUITES + ("all",))
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--json", help="write the JSON report here")
    ver.set_defaults(func=cmd_verify)

    st = sub.add_parser("stats", help="histograms and progress series")
    st.add_argument("traces", nargs="+", help="trace CSV files")
    st.add_argument("--out-dir", dest="out_dir", default="stats")
    st.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
