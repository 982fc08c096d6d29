"""Stochastic amplitude-flow phase retrieval: operators, losses, solvers and experiments."""

from .codec import load_ensemble, save_ensemble
from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionMismatchError,
    EnsembleFormatError,
    InvalidParameterError,
    NumericalAbortError,
    PhaseFlowError,
)
from .harness import (
    ExperimentPlan,
    InstanceSpec,
    PlannedRun,
    build_instance,
    build_reference_instance,
    run_trials,
)
from .loss import LossSpec, loss_value, wirtinger_gradient
from .measurement import (
    MeasurementEnsemble,
    NoiseSpec,
    build_dense_ensemble,
    build_stft_ensemble,
    simulate,
)
from .rng import SeededRng
from .solvers import (
    ConstantSchedule,
    PolynomialSchedule,
    RunTrace,
    SolverConfig,
    af_run,
    kaczmarz_run,
    pie_run,
    run_solver,
    saf_run,
)
from .stochastic import SamplingDistribution, abc_constants, stochastic_gradient

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConstantSchedule",
    "ConvergenceError",
    "DimensionMismatchError",
    "EnsembleFormatError",
    "ExperimentPlan",
    "InstanceSpec",
    "InvalidParameterError",
    "LossSpec",
    "MeasurementEnsemble",
    "NoiseSpec",
    "NumericalAbortError",
    "PhaseFlowError",
    "PlannedRun",
    "PolynomialSchedule",
    "RunTrace",
    "SamplingDistribution",
    "SeededRng",
    "SolverConfig",
    "__version__",
    "abc_constants",
    "af_run",
    "build_dense_ensemble",
    "build_instance",
    "build_reference_instance",
    "build_stft_ensemble",
    "kaczmarz_run",
    "load_ensemble",
    "loss_value",
    "pie_run",
    "run_solver",
    "run_trials",
    "saf_run",
    "save_ensemble",
    "simulate",
    "stochastic_gradient",
    "wirtinger_gradient",
]
