"""Higher-order Neyman-orthogonal moments for Gaussian models with unit effects."""
from .chainrule import MeanDerivatives, faa_di_bruno_matrix
from .gauss import GaussianScale, QuadratureRule, density_derivative_ratio, hermite_moments, quadrature_expectation, quadrature_rule
from .multiindex import IndexFamily, MultiIndex, enumerate_indices, factorial_weight
from .ortho import (
    EtaFunctionMoment,
    ProjectionComponents,
    ScoreMoment,
    SingularBasisCovariance,
    StackedMoment,
    generalized_score,
    orthogonality_check,
    orthogonalized_moment,
    projection_components,
)

__all__ = [
    "EtaFunctionMoment",
    "GaussianScale",
    "IndexFamily",
    "MeanDerivatives",
    "MultiIndex",
    "ProjectionComponents",
    "QuadratureRule",
    "ScoreMoment",
    "SingularBasisCovariance",
    "StackedMoment",
    "density_derivative_ratio",
    "enumerate_indices",
    "faa_di_bruno_matrix",
    "factorial_weight",
    "generalized_score",
    "hermite_moments",
    "orthogonality_check",
    "orthogonalized_moment",
    "projection_components",
    "quadrature_expectation",
    "quadrature_rule",
]

__version__ = "0.1.0"
