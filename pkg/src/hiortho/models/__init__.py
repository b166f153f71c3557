"""Concrete Gaussian models and their closed-form reference estimators."""
from .ar1 import ar1_adjusted_score, ar1_bias_factor, ar1_estimate, simulate_ar1_panel
from .base import GaussianRegressionModel, LinearMeanModel
from .ces import (
    PARAM_NAMES,
    CesSubsetModel,
    CesTheta,
    average_output_moment,
    beta_restriction,
    ces_log_aggregate,
    ces_log_aggregate_derivatives,
    ces_subset_model,
    clip_gamma,
    expected_team_output,
    expected_team_output_derivatives,
)
from .linear import linear_engine_estimates, linear_trace_estimators, quadratic_form_moment
from .neyman_scott import (
    DegeneratePanelError,
    NeymanScottModel,
    neyman_scott_closed_forms,
    neyman_scott_engine_estimates,
    squared_mean_moment,
)

__all__ = [
    "CesSubsetModel",
    "CesTheta",
    "DegeneratePanelError",
    "GaussianRegressionModel",
    "LinearMeanModel",
    "NeymanScottModel",
    "PARAM_NAMES",
    "ar1_adjusted_score",
    "ar1_bias_factor",
    "ar1_estimate",
    "average_output_moment",
    "beta_restriction",
    "ces_log_aggregate",
    "ces_log_aggregate_derivatives",
    "ces_subset_model",
    "clip_gamma",
    "expected_team_output",
    "expected_team_output_derivatives",
    "linear_engine_estimates",
    "linear_trace_estimators",
    "neyman_scott_closed_forms",
    "neyman_scott_engine_estimates",
    "quadratic_form_moment",
    "simulate_ar1_panel",
    "squared_mean_moment",
]
