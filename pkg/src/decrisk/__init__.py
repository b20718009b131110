"""Decision-dependent risk minimization in geometrically decaying environments.

The environment responds to a deployed decision x by relaxing geometrically
toward a decision-indexed distribution D(x). The package provides exact
mixture dynamics for that environment, epoch-based zeroth-order and
first-order stochastic methods with their theoretical schedules, retraining
baselines, offline optimum/stable-point solvers, parameter estimation from
pilot pricing data, and a config-driven experiment runner.
"""

__version__ = "0.1.0"

from .geometry import ConstraintSet, sample_unit_ball, sample_unit_sphere
from .distributions import BaseDistribution, DistributionMap, EnvironmentState
from .losses import LossModel, ProblemConstants, compute_constants, strategic_best_response
from .oracles import fo_gradient, zo_gradient
from .algorithms import (
    FOConfig,
    Trajectory,
    ZOConfig,
    fo_epoch_length,
    run_first_order,
    run_rgd,
    run_rrm,
    run_zeroth_order,
    step_decay_schedule,
    zo_epoch_length,
)
from .analysis import (
    OracleReport,
    oracle_report,
    performative_optimum,
    performative_stable,
    sliced_w1,
    theory_report,
    w1_empirical_1d,
)
from .sfpark import (
    LambdaEstimate,
    OccupancyRecord,
    PriceEpisode,
    build_group_semi_synthetic,
    build_semi_synthetic,
    estimate_block_params,
    estimate_lambda,
    estimate_sensitivity,
    fill_missing_rates,
    load_records,
)
from .experiment import ExperimentConfig, execute, sweep

__all__ = [
    "ConstraintSet",
    "sample_unit_ball",
    "sample_unit_sphere",
    "BaseDistribution",
    "DistributionMap",
    "EnvironmentState",
    "LossModel",
    "ProblemConstants",
    "compute_constants",
    "strategic_best_response",
    "fo_gradient",
    "zo_gradient",
    "ZOConfig",
    "FOConfig",
    "Trajectory",
    "zo_epoch_length",
    "fo_epoch_length",
    "step_decay_schedule",
    "run_zeroth_order",
    "run_first_order",
    "run_rgd",
    "run_rrm",
    "OracleReport",
    "oracle_report",
    "performative_optimum",
    "performative_stable",
    "w1_empirical_1d",
    "sliced_w1",
    "theory_report",
    "OccupancyRecord",
    "PriceEpisode",
    "LambdaEstimate",
    "load_records",
    "fill_missing_rates",
    "estimate_sensitivity",
    "estimate_lambda",
    "estimate_block_params",
    "build_semi_synthetic",
    "build_group_semi_synthetic",
    "ExperimentConfig",
    "execute",
    "sweep",
]
