"""Estimation and testing of state-dependent quantile and expectile forecasts."""

from .combine import (CombinationProblem, DensityForecast, crps_gaussian, gaussian_closed_form,
                      score_forecasts, solve_combination)
from .data import (ForecastDataset, InstrumentMatrix, InstrumentRecipe, align, build_instruments,
                   load_csv, parse_recipe)
from .exceptions import (ConvergenceError, DataValidationError, EstimationError,
                         FunctionalGmmError, IdentificationError, SingularCovarianceError)
from .functionals import (FunctionalFamily, identification, normal_expectile, normal_quantile,
                          sample_expectile, sample_quantile)
from .gmm import (GmmFit, HacConfig, MomentSeries, OptimizerConfig, asymptotic_covariance,
                  hac_covariance, moment_jacobian, moment_series, two_step_estimate)
from .inference import (Restriction, TestResult, builtin_restriction, chi2_survival, j_test,
                        level_band, level_confidence_band, wald_test)
from .sim import (ArGarchParams, McConfig, McReport, asymmetric_info_scenario, full_info_forecast,
                  mc_size_power, rigid_info_forecast, simulate_ar_garch)
from .specmodels import (Constant, LogisticLinear, Seasonal, SpecificationModel, StructuralBreak,
                         make_model)

__version__ = "0.1.0"
