"""Gradient combination strategies for multi-task optimization, a synthetic
two-task benchmark with a grid oracle, trajectory tooling, and diagnostics."""

from .core import (
    CombineOutcome,
    NonFinite,
    PositiveWeights,
    SimplexWeights,
    TaskGradientSet,
    ZeroVector,
    cosine,
    gram,
)
from .solvers import (
    SkipSignal,
    SolverConfig,
    mgda_minnorm,
    minimize_cagrad_family,
    nash_weights,
    simplex_project,
)
from .combiners import (
    CombinerConfig,
    Combiner,
    METHOD_NAMES,
    NashState,
    adaptive_threshold_combine,
    cagrad_combine,
    estimate_mu,
    imgrad_cagrad_combine,
    imgrad_nash_combine,
    ls_combine,
    make_combiner,
    mgda_combine,
    nash_combine,
    pcgrad_combine,
    wrap_update_every,
)
from .toybench import (
    GridOracleResult,
    ToyObjective,
    ToyWeighting,
    grid_oracle,
    init_points,
    init_points_small,
    load_oracle_fixtures,
    oracle_loss,
    toy_gradients,
    toy_losses,
    weight_presets,
)
from .runner import (
    BoundAuditReport,
    OptimizerConfig,
    QuadraticTwoTask,
    TrajectoryTrace,
    descent_bound_audit,
    optimizer_step,
    run_trajectory,
)
from .metrics import (
    CorrelationReport,
    ZeroBaseline,
    correlation_study,
    delta_m,
    gradient_similarity,
    imbalance_ratio,
    individual_progress,
    is_conflicting,
    is_imbalanced,
    pareto_failure,
    pareto_failure_census,
    sample_imbalanced_pair,
)
from .seeding import splitmix64

__version__ = "0.1.0"

__all__ = [
    "CombineOutcome", "NonFinite", "PositiveWeights", "SimplexWeights",
    "TaskGradientSet", "ZeroVector", "cosine", "gram",
    "SkipSignal", "SolverConfig", "mgda_minnorm", "minimize_cagrad_family",
    "nash_weights", "simplex_project",
    "CombinerConfig", "Combiner", "METHOD_NAMES", "NashState",
    "adaptive_threshold_combine", "cagrad_combine", "estimate_mu",
    "imgrad_cagrad_combine", "imgrad_nash_combine", "ls_combine",
    "make_combiner", "mgda_combine", "nash_combine", "pcgrad_combine",
    "wrap_update_every",
    "GridOracleResult", "ToyObjective", "ToyWeighting", "grid_oracle",
    "init_points", "init_points_small", "load_oracle_fixtures", "oracle_loss",
    "toy_gradients", "toy_losses", "weight_presets",
    "BoundAuditReport", "OptimizerConfig", "QuadraticTwoTask",
    "TrajectoryTrace", "descent_bound_audit", "optimizer_step",
    "run_trajectory",
    "CorrelationReport", "ZeroBaseline", "correlation_study", "delta_m",
    "gradient_similarity", "imbalance_ratio", "individual_progress",
    "is_conflicting", "is_imbalanced", "pareto_failure",
    "pareto_failure_census", "sample_imbalanced_pair",
    "splitmix64",
]
