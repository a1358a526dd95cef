"""Numerical laboratory for Caputo fractional BSDEs of order alpha in (1/2, 1)."""

__version__ = "0.1.0"

from .mittag_leffler import MLBounds, MLEvaluationError, MLParams, ml_bounds, ml_matrix, ml_scalar
from .stochastic_core import (
    PathEnsemble,
    RegressionBasis,
    Regressor,
    TimeGrid,
    conditional_expectation,
    make_grid,
    martingale_integrand,
    representation_kernel_K,
    sample_paths,
)
from .fields import AdaptedPair, TriangularField
from .weighted_norms import NormReport, kernel_weights, norm_x, norm_y, pair_norm
from .linear_fbsde import (
    AprioriReport,
    KernelReading,
    LinearProblem,
    apriori_check,
    residual_check,
    solve_linear,
    uniqueness_probe,
)
from .picard_solver import (
    AffineDrift,
    AffineG,
    ProblemSpec,
    SolveReport,
    SolverConfig,
    TerminalPoly,
    contraction_lhs,
    psi_step,
    solve_nonlinear,
)
from .volterra_equivalence import CoincidenceReport, VolterraSolveConfig, coincidence_check, delta_condition, solve_volterra
from .catalog import CatalogEntry, catalog_list, get_entry
from .config import ConfigError, RunConfig, parse_config, serialize_config

__all__ = [
    "AdaptedPair",
    "AffineDrift",
    "AffineG",
    "AprioriReport",
    "CatalogEntry",
    "CoincidenceReport",
    "ConfigError",
    "KernelReading",
    "LinearProblem",
    "MLBounds",
    "MLEvaluationError",
    "MLParams",
    "NormReport",
    "PathEnsemble",
    "ProblemSpec",
    "RegressionBasis",
    "Regressor",
    "RunConfig",
    "SolveReport",
    "SolverConfig",
    "TerminalPoly",
    "TimeGrid",
    "TriangularField",
    "VolterraSolveConfig",
    "apriori_check",
    "catalog_list",
    "coincidence_check",
    "conditional_expectation",
    "contraction_lhs",
    "delta_condition",
    "get_entry",
    "kernel_weights",
    "make_grid",
    "martingale_integrand",
    "ml_bounds",
    "ml_matrix",
    "ml_scalar",
    "norm_x",
    "norm_y",
    "pair_norm",
    "parse_config",
    "psi_step",
    "representation_kernel_K",
    "residual_check",
    "sample_paths",
    "serialize_config",
    "solve_linear",
    "solve_nonlinear",
    "solve_volterra",
    "uniqueness_probe",
]
