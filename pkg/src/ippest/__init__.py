"""Parametric estimation for repeated observations of inhomogeneous Poisson processes."""

from .errors import (
    ConfigError,
    DegenerateMoments,
    DeltaOutOfRange,
    DimensionMismatch,
    DomainError,
    EmptySample,
    EnvelopeError,
    EstimationError,
    InputError,
    IppestError,
    NoSolution,
    NonConvergence,
    NonPositiveIntensity,
    OutOfRange,
    ParseError,
    SingularFisher,
    SingularJacobian,
    StudyAborted,
    TooFewSamples,
    UnsortedEvents,
)
from .mme import (
    MomentSpec,
    check_identifiability,
    default_moments,
    empirical_moments,
    invert_moments,
    mme_covariance,
    mme_estimate,
)
from .model import (
    Basis,
    GammaShapeRate,
    GaussianBell,
    IntensityModel,
    LinearBasis,
    ParamSpace,
    SinePhase,
    TimeDomain,
    model_from_config,
)
from .multistep import (
    EstimatorTrace,
    LearningSplit,
    ScoreAccumulator,
    estimate_pipeline,
    learning_size,
    one_step,
    one_step_process,
    path_score,
    two_step_process,
)
from .paths import PoissonPath, Sample, SeedSpec, read_sample, simulate_sample, write_sample
from .quad import QuadConfig, fisher_info, integrate, moment_jacobian, moment_map
from .study import StudyConfig, StudyReport, compare_to_target, normality_diagnostics, run_study

__version__ = "0.1.0"
