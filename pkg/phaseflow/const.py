"""Constants shared by the phaseflow library and command line interface."""

from __future__ import annotations

from typing import Final, Literal

# DFT / linear algebra
DFT_DIRECT_MAX: Final = 64
SPECTRAL_NORM_TOL: Final = 1e-10
SPECTRAL_NORM_MAX_ITER: Final = 20_000
SPECTRAL_NORM_SEED: Final = 20_230_101
SPECTRAL_NORM_PERTURBATION: Final = 1e-3

# Loss and oracles
FD_STEP_SCALE: Final = 1e-6
FD_HESSIAN_STEP_SCALE: Final = 1e-4
FD_NONDEGENERATE_MIN: Final = 1e-3
GRADIENT_TAMPER_FACTOR: Final = 1.01

# Diagnostics
DESCENT_SLACK: Final = 1e-10
STDERR_BAND: Final = 5.0
CONVERGED_FLOOR: Final = 1e-10
MIN_RATE_POINTS: Final = 100
MIN_SECOND_MOMENT_RESAMPLES: Final = 10_000
KACZMARZ_NULL_TOL: Final = 1e-10
WEIGHTED_SUM_GROWTH_LIMIT: Final = 2.0

# Generator
RNG_ALGORITHM: Final = "philox4x64-10"
INIT_STREAM_TAG: Final = 1 << 63
NOISE_STREAM_TAG: Final = 1 << 62
INSTANCE_STREAM_TAG: Final = 1 << 61
CHECK_STREAM_TAG: Final = 1 << 60
TRIAL_INDEX_BITS: Final = 32
U64_MASK: Final = (1 << 64) - 1

ALGO_AF: Final = "af"
ALGO_SAF: Final = "saf"
ALGO_KACZMARZ: Final = "kaczmarz"
ALGO_PIE: Final = "pie"
ALGORITHMS: Final = (ALGO_AF, ALGO_SAF, ALGO_KACZMARZ, ALGO_PIE)

Algorithm = Literal["af", "saf", "kaczmarz", "pie"]

SAMPLING_UNIFORM: Final = "uniform"
SAMPLING_VARIANCE_REDUCING: Final = "variance_reducing"

NOISE_NONE: Final = "none"
NOISE_GAUSSIAN: Final = "gaussian"
NOISE_POISSON: Final = "poisson"

INSTANCE_STFT: Final = "stft"
INSTANCE_DENSE: Final = "dense"

WINDOW_GAUSSIAN: Final = "gaussian"
WINDOW_BOX: Final = "box"
WINDOW_ONES: Final = "ones"
WINDOW_RANDOM: Final = "random"
WINDOW_KINDS: Final = (WINDOW_GAUSSIAN, WINDOW_BOX, WINDOW_ONES, WINDOW_RANDOM)

# Reference instance used by the trend checks
REFERENCE_DIMENSION: Final = 32
REFERENCE_SHIFTS: Final = 8
REFERENCE_WINDOW_WIDTH: Final = 6.0
REFERENCE_SEED: Final = 0

# Ensemble JSON container
ENSEMBLE_FORMAT: Final = "phaseflow.ensemble"
ENSEMBLE_FORMAT_VERSION: Final = 1
BLOCK_TYPE_DENSE: Final = "dense"
BLOCK_TYPE_STFT: Final = "stft"

# CLI / configuration keys
CONF_INSTANCE: Final = "instance"
CONF_SOLVER: Final = "solver"
CONF_SOLVERS: Final = "solvers"
CONF_HARNESS: Final = "harness"
CONF_CHECK: Final = "check"
CONF_OUTPUT: Final = "output"
CONF_ENSEMBLE: Final = "ensemble"

DEFAULT_OUTPUT_DIR: Final = "out"
DEFAULT_ITERS: Final = 1000
DEFAULT_TRIALS: Final = 1
DEFAULT_WORKERS: Final = 1
DEFAULT_SEED: Final = 0
DEFAULT_ALPHA0: Final = 0.05
DEFAULT_INIT_SCALE: Final = 1.0
DEFAULT_CHECK_RESAMPLES: Final = 200_000

ENSEMBLE_FILENAME: Final = "ensemble.json"
SUMMARY_FILENAME: Final = "summary.json"
MANIFEST_FILENAME: Final = "manifest.json"
CHECK_REPORT_FILENAME: Final = "check_report.json"

CSV_HEADER: Final = (
    "t",
    "mean_loss",
    "mean_grad_norm",
    "min_mean_grad_norm",
    "mu_t",
    "cum_mu",
    "cum_weighted_sq",
)
FLOAT_FORMAT: Final = ".17g"

EXIT_OK: Final = 0
EXIT_CONFIG_ERROR: Final = 1
EXIT_NUMERICAL_ABORT: Final = 2
EXIT_CHECK_FAILURE: Final = 3
