"""Recursive identification of MA systems observed through binary/quantized sensors.

Simulator, stochastic-approximation estimator, SPAO diagnostics, rate and
tail analysis, Cramer-Rao lower bound, and a reproducible Monte Carlo
harness.
"""

from .bench import (CrlbResult, EnsembleResult, ExperimentConfig, crlb,
                    empirical_from_phase_means, empirical_measurement_baseline,
                    invert_cdf, monte_carlo, thin_grid)
from .errors import (ConfigError, InversionError, NumericalFault,
                     RateDegenerateError, SetValuedIdError, ShapeError,
                     SingularityError, StatisticsError, TableDomainError)
from .estimate import (EstimateTrajectory, EstimatorState, StepPolicy,
                       expected_output, fold_ensemble, run_estimator, sa_step,
                       step_size)
from .model import (NoiseModel, PECertificate, SystemModel, noise_cdf,
                    noise_pdf, noise_sample)
from .simulate import (InputPlan, RunTrace, build_regressors, gen_inputs,
                       observe, pe_check, simulate_run)
from .spao import (RateReport, SpaoTrace, build_spao_trace, compute_T,
                   compute_psi, lower_density_bound, rate_coefficient,
                   rate_diagnostics, spao_generalized, tail_estimate,
                   wilson_interval)

__version__ = "0.1.0"
