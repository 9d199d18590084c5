"""Robust empirical risk minimization with median-of-means type M-estimators of the risk."""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .asymptotics import (AsymptoticCovariance, JointGaussianSpec, a_squared, a_squared_monte_carlo,
                          d_squared, stein_check, v_squared)
from .datagen import ContaminationSpec, NoiseSpec, contaminate, sample_clean
from .errors import (ConfigurationError, DataError, DegenerateWeightsError, DomainError, HarnessError,
                     NumericalError, ReportError, RobustERMError, SpecError)
from .estimators import EstimateResult, SolverConfig, minimize_robust, minmax_estimate, plain_erm, robust_gradient
from .harness import (NormalityReport, ReplicationSet, breakdown_curve, concentration_check, ks_normality,
                      replicate)
from .models import RiskModel, exponential_rate, gaussian_location, linear_regression
from .proxy import (BlockScheme, ProxyResult, make_blocks, robust_diff, robust_mean, robust_risk,
                    u_statistic_proxy)
from .smooth_loss import SmoothLoss, build_smoothed_huber, rho, rho_deriv

__all__ = [
    "BACKEND", "AsymptoticCovariance", "JointGaussianSpec", "a_squared", "a_squared_monte_carlo", "d_squared",
    "stein_check", "v_squared", "ContaminationSpec", "NoiseSpec", "contaminate", "sample_clean",
    "ConfigurationError", "DataError", "DegenerateWeightsError", "DomainError", "HarnessError", "NumericalError",
    "ReportError", "RobustERMError", "SpecError", "EstimateResult", "SolverConfig", "minimize_robust",
    "minmax_estimate", "plain_erm", "robust_gradient", "NormalityReport", "ReplicationSet", "breakdown_curve",
    "concentration_check", "ks_normality", "replicate", "RiskModel", "exponential_rate", "gaussian_location",
    "linear_regression", "BlockScheme", "ProxyResult", "make_blocks", "robust_diff", "robust_mean",
    "robust_risk", "u_statistic_proxy", "SmoothLoss", "build_smoothed_huber", "rho", "rho_deriv",
]
