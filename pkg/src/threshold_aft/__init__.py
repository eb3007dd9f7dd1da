"""Multi-threshold accelerated failure time regression for right-censored data."""

from .censored import (
    KaplanMeierWeights,
    SurvivalDataset,
    WlsFit,
    km_weights,
    order_subset,
    stute_wls,
)
from .penalty import PenaltyKind, PenaltySpec, group_threshold, penalty_derivative, penalty_value, scalar_threshold
from .refining import final_penalized_fit, refine_threshold, subgroup_coefficients
from .selection import ThresholdFit, TuningConfig, bic_for_thresholds, select_lambda, tsmcd
from .simulation import SimDesign, bootstrap_se, generate, run_monte_carlo
from .splitting import build_group_design, build_segments, extract_candidates, group_coordinate_descent

__version__ = "0.1.0"

__all__ = [
    "KaplanMeierWeights",
    "PenaltyKind",
    "PenaltySpec",
    "SimDesign",
    "SurvivalDataset",
    "ThresholdFit",
    "TuningConfig",
    "WlsFit",
    "bic_for_thresholds",
    "bootstrap_se",
    "build_group_design",
    "build_segments",
    "extract_candidates",
    "final_penalized_fit",
    "generate",
    "group_coordinate_descent",
    "group_threshold",
    "km_weights",
    "order_subset",
    "penalty_derivative",
    "penalty_value",
    "refine_threshold",
    "run_monte_carlo",
    "scalar_threshold",
    "select_lambda",
    "stute_wls",
    "subgroup_coefficients",
    "tsmcd",
]
