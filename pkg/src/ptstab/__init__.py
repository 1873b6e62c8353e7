"""Predefined-time stabilization of Ito stochastic systems.

Signed-power algebra, strict-feedback system models, controller synthesis,
an Euler-Maruyama settling-time simulator, grid certificates and Monte Carlo
estimation of expected settling times.
"""

from .certify import (
    CertReport,
    LyapunovSpec,
    beta_integral,
    check_drift_condition,
    corollary21_beta,
    corollary22_check,
    drift_grid,
    example21_certificate,
    wj_partials_check,
    wj_richardson_ratio,
)
from .controllers import (
    Controller,
    GainSet,
    backstep_synthesize,
    beta_from_corollary23,
    corollary23_gains,
    example41_controller,
    example41_k2,
    example42_cascade,
    example42_controller,
    fixed_time_controller,
    predefined_controller_scalar,
    tmax_fixed_time,
    zero_controller,
)
from .errors import ConfigError, ConstraintError, DomainError, EstimationError, EvaluationError, PtstabError
from .montecarlo import RunConfig, SettlingStats, estimate_settling, sweep_bound
from .sde import SimConfig, Trajectory, run_seed, simulate
from .sigpow import lemma_residuals, sigpow, sigpow_d1, sigpow_d2
from .system import (
    ItoSystem,
    ScalarField,
    StrictFeedbackSystem,
    generator_eval,
    kappa_interval,
    make_system,
    r_recursion,
)

__version__ = "0.1.0"
