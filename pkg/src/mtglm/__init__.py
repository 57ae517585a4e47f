"""Robust penalized MT-estimators for Poisson regression."""
from importlib import resources

from .dataio import Dataset, ValidationError, load_csv
from .families import (POISSON, AssumptionViolation, DegenerateInput, DomainError, MFunctionTable,
                       PoissonFamily, build_m_table, cached_table, m_derivatives, m_value,
                       poisson_deviance_residual)
from .inference import (AbpBound, OutlierReport, RankDeficiency, SandwichCovariance,
                        abp_lower_bound, detect_outliers, sandwich_covariance)
from .init import (InitConfig, InitializationFailure, InitResult, decompose, penalized_lst_fit,
                   robust_start, sensitivity_components, stage1, stage2)
from .penalties import (KINDS, PenaltySpec, lla_weights, mcp_value, penalty_value, property_flags,
                        scad_value, soft_threshold)
from .robust_loss import MtObjective, RhoFunction, mt_gradient, mt_hessian, mt_loss
from .selection import (ConfigurationError, PathResult, RcvResult, complexity, degrees_of_freedom,
                        fit_ml_path, fit_path, hat_trace, lambda_grid, lambda_max, rcv,
                        reference_lambda, ric)
from .simulation import (MonteCarloReport, ScenarioConfig, contaminate, generate_sample,
                         run_monte_carlo)
from .solver import (FitResult, NonFiniteObjective, PoissonMlObjective, SolverConfig,
                     coordinate_descent_step, fit_ml, irwls_fit, ridge_normal_equations)

__version__ = "0.1.0"


def example_path():
    """Path of the bundled 20-row example CSV (response ``y``, covariates x1..x3)."""
    return resources.files(__name__).joinpath("data/example.csv")
