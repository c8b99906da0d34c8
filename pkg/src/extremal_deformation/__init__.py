"""Spatial deformation for non-stationary extremal dependence.

Thin-plate-spline deformations of the sampling locations are fitted so that
a stationary tail-dependence model holds in the deformed space, then
stationary Brown-Resnick or inverted Brown-Resnick models are fitted by
censored pairwise likelihood and compared by CLAIC.
"""

from .data_model import (ObservationMatrix, SiteSet, grid_sites, load_observations, load_sites,
                         rank_transform)
from .deform import (DeformConfig, DeformationResult, chi_frobenius_objective,
                     corr_frobenius_objective, fit_deformation, smith_gaussian_objective)
from .dependence import (DependenceMatrix, chi_br, chi_ibr, empirical_chi_matrix,
                         empirical_corr_matrix, extremal_coefficient, matern_corr)
from .diagnostics import (CondExtFit, condext_expectation, fit_condext_pair,
                          stationary_bootstrap_ci, triple_chi_empirical, triple_chi_theoretical)
from .exceptions import (ConfigError, DeformationError, DomainError, FormatError, NumericError,
                         ParseError)
from .fit import ModelFit, censored_pair_loglik, claic, fit_pairwise_model
from .simulate import (ProcessSpec, invert_process, nonstationary_variogram, simulate,
                       simulate_br, simulate_gaussian, simulate_gaussian_mixture,
                       simulate_max_mixture)
from .study import StudyConfig, run_study
from .tps import (SplineParams, apply_deformation, check_bijectivity, complete_deltas,
                  tps_basis)

__all__ = [
    "CondExtFit",
    "ConfigError",
    "DeformConfig",
    "DeformationError",
    "DeformationResult",
    "DependenceMatrix",
    "DomainError",
    "FormatError",
    "ModelFit",
    "NumericError",
    "ObservationMatrix",
    "ParseError",
    "ProcessSpec",
    "SiteSet",
    "SplineParams",
    "StudyConfig",
    "apply_deformation",
    "censored_pair_loglik",
    "check_bijectivity",
    "chi_br",
    "chi_frobenius_objective",
    "chi_ibr",
    "claic",
    "complete_deltas",
    "condext_expectation",
    "corr_frobenius_objective",
    "empirical_chi_matrix",
    "empirical_corr_matrix",
    "extremal_coefficient",
    "fit_condext_pair",
    "fit_deformation",
    "fit_pairwise_model",
    "grid_sites",
    "invert_process",
    "load_observations",
    "load_sites",
    "matern_corr",
    "nonstationary_variogram",
    "rank_transform",
    "run_study",
    "simulate",
    "simulate_br",
    "simulate_gaussian",
    "simulate_gaussian_mixture",
    "simulate_max_mixture",
    "smith_gaussian_objective",
    "stationary_bootstrap_ci",
    "tps_basis",
    "triple_chi_empirical",
    "triple_chi_theoretical",
]

__version__ = "0.1.0"
