"""spdelab: spectral simulation and drift-estimation laboratory for the
fractional stochastic heat equation.

Simulates Fourier modes exactly via their Ornstein-Uhlenbeck transitions,
evaluates the continuous-time and time-discretized maximum-likelihood drift
estimators, and verifies consistency, asymptotic normality, efficiency and
discretization rates by reproducible Monte Carlo.
"""

from .estimators import (
    DecompositionTerms,
    EstimateRecord,
    MissingIncrementsError,
    ZeroDenominatorError,
    decomposition_terms,
    mle_continuous,
    mle_discrete,
    normalize_error,
    theoretical_std,
    upsilon,
)
from .experiments import (
    ExperimentConfig,
    SweepPoint,
    rates_config,
    read_records,
    run_consistency,
    run_experiment,
    run_fisher_efficiency,
    run_normality,
    run_rate_verification,
    summarize_records,
    write_outputs,
)
from .model import (
    AssumptionWarning,
    EigenSequence,
    ModelParams,
    build_eigensequence,
    covariance,
    fisher_information,
    fisher_information_asymptotic,
    fourth_moment,
    second_moment,
    spectral_sum,
    weyl_constant,
)
from .simulate import (
    ObservationMatrix,
    PathEnsemble,
    SimGrid,
    StreamKey,
    derive_stream,
    exact_transition,
    read_observations,
    simulate_ensemble,
    simulate_observations,
    subsample,
    write_observations,
)
from .stats import KsResult, SlopeFit, empirical_moments, ks_test, loglog_slope

__version__ = "0.1.0"
