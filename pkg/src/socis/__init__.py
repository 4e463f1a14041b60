"""Importance sampling of SDE path functionals via stochastic optimal control.

Controlled Euler-Maruyama sampling with exit stopping, log and quadratic
control formulations, approximate policy iteration on RBF bases, committor
benchmarks and control-variate estimators of mean exit times.
"""
__version__ = "0.1.0"

from .errors import (ConfigError, DegenerateEstimate, DomainError, InvalidArgument,
                     NonpositiveValue, NoValidSamples, NumericalBlowup, SingularPoint,
                     SocisError)
from .sde import (ControlSign, ExitStatus, PathBatch, SdeModel, StopDomain, StoppedPath,
                  reweighted_expectation, sample_batch, simulate_until_exit)
from .rbf import ParametricFunction, RbfBasis, RbfKind, design_points, fit_least_squares
from .costs import (CostSpecLog, CostSpecQuad, FeedbackPolicy, McEstimate, McParams, eval_J1,
                    eval_J2, eval_J2_reweighted, optimal_control_log, optimal_control_quad,
                    transform_check)
from .benchmarks import (DoubleWellProblem, ShellProblem, bm_interval_mfet_exact,
                         double_well_biased_potential, double_well_committor_1d,
                         shell_committor_exact, shell_optimal_control)
from .api import (ApiConfig, ApiStatus, ApiTrace, Formulation, api_run_log, api_run_quad,
                  monotonicity_report)
from .cv import (ControlVariateSpec, CvEstimate, OuModel, mfet_control_variate, mgf_sweep,
                 mgf_tau_estimate)
