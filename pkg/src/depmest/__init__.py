"""M-estimation of linear regression models with dependent stationary errors.

The package covers the full simulation-to-inference loop: convex losses and
their population functionals, design-matrix summaries, stationary causal
error processes with innovation coupling, coupling-based dependence
diagnostics, a smoothing-homotopy solver, dependence-adjusted covariance and
confidence regions, and a reproducible Monte-Carlo experiment harness.
"""

from .dependence import (
    DecayFit,
    DependenceProfile,
    SummabilityReport,
    fit_decay,
    measure_dependence,
    srd_diagnostic,
)
from .designs import (
    Design,
    DesignSummary,
    RescaledDesign,
    build_polynomial_design,
    build_random_design,
    design_from_csv,
    lag_cross_sum,
    rescale,
    summarize,
)
from .estimators import (
    FitResult,
    OscillationResult,
    SolverConfig,
    fit,
    oscillation_statistic,
    score,
)
from .exceptions import NumericError, UsageError
from .experiments import (
    ExperimentConfig,
    ExperimentReport,
    run_bahadur,
    run_clt,
    run_dependence,
    run_experiment,
    run_oscillation,
)
from .inference import (
    ConfidenceRegion,
    LongRunCovariance,
    RemainderReport,
    combine_long_run,
    confidence_region,
    estimate_long_run_covariance,
    linear_term,
    linearization_remainder,
)
from .losses import (
    HuberLoss,
    PowerLoss,
    PsiFunctionals,
    QuantileLoss,
    SquareLoss,
    estimate_psi_mean,
    estimate_psi_mean_derivative,
    estimate_psi_modulus,
    parse_loss,
)
from .processes import (
    ArchProcess,
    CoupledPaths,
    ExplicitCoeffs,
    Gaussian,
    GeometricCoeffs,
    LinearProcess,
    MarkovRecursion,
    PolynomialCoeffs,
    StableSAS,
    StudentT,
    ThresholdAR,
    UniformInnovations,
    arch_stability_margin,
    parse_innovation,
    parse_model,
    sample_innovations,
    simulate_coupled,
    simulate_coupled_batch,
    simulate_path,
)

__version__ = "0.1.0"
