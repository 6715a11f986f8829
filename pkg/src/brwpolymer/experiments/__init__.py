"""Config-driven experiments, their reports and the command line interface."""

from .config import DEFAULTS, ConfigError, ExperimentConfig, SimConfig, build_model, load_config
from .report import RunReport, Statistic
from .runners import (
    RUNNERS,
    BudgetExceeded,
    run_first_order,
    run_identity_suite,
    run_meander_fdd,
    run_overlap,
    run_prop_exp,
    run_renewal,
    run_simulate,
    run_spine_check,
    run_theorem_a,
)

__all__ = [
    "DEFAULTS",
    "RUNNERS",
    "BudgetExceeded",
    "ConfigError",
    "ExperimentConfig",
    "RunReport",
    "SimConfig",
    "Statistic",
    "build_model",
    "load_config",
    "run_first_order",
    "run_identity_suite",
    "run_meander_fdd",
    "run_overlap",
    "run_prop_exp",
    "run_renewal",
    "run_simulate",
    "run_spine_check",
    "run_theorem_a",
]
