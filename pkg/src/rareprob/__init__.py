"""Two-stage adaptive design for estimating small failure probabilities.

A Gaussian-process surrogate first locates the failure contour of an
expensive black-box function (Stage 1, with a Monte Carlo stopping
criterion), then spends the remaining evaluation budget on the
highest-entropy Monte Carlo samples and returns a hybrid estimate mixing
observed and predicted classifications (Stage 2). Competing estimators
(exhaustive contour location, proximity allocation, surrogate-informed
importance sampling) are included for benchmarking.
"""

from .acquisition import (
    EntropyScore,
    acquire_cl,
    entropy,
    failure_probability,
    score_point,
)
from .controller import (
    BudgetConfig,
    StageOneTrace,
    run_exhaustive_cl,
    run_method_suite,
    run_siis,
    run_stage1,
    run_stage2,
    run_two_stage,
    run_two_stage_proximity,
    select_proximity,
    select_stage2,
    stopping_check,
)
from .design import latin_hypercube
from .distributions import (
    BoxDomain,
    InputDistribution,
    TruncatedNormal,
    Uniform,
    marginal_pdf,
    sample_marginal,
)
from .estimators import (
    FAIL_ABOVE,
    FAIL_BELOW,
    FailureEstimate,
    McPool,
    Method,
    brute_mc,
    fails,
    hybrid_mc,
    importance_sampling,
    mc_std_err,
    required_m,
    surrogate_mc,
)
from .gmm import GaussianMixture, em_fit, gmm_pdf, gmm_sample, select_k
from .gp import (
    KernelParams,
    Prediction,
    TrainedSurrogate,
    fit,
    kernel,
    log_marginal_likelihood,
    predict,
    update,
)
from .rng import RngStream
from .special import std_normal_cdf, std_normal_pdf, std_normal_quantile
from .testbed import (
    BenchmarkProblem,
    ExternalSimulator,
    SimulatorFault,
    hartmann6,
    herbie,
    ishigami,
    make_problem,
    oracle_alpha,
    plateau4,
)

__version__ = "0.1.0"

__all__ = [
    "BenchmarkProblem",
    "BoxDomain",
    "BudgetConfig",
    "EntropyScore",
    "ExternalSimulator",
    "FAIL_ABOVE",
    "FAIL_BELOW",
    "FailureEstimate",
    "GaussianMixture",
    "InputDistribution",
    "KernelParams",
    "McPool",
    "Method",
    "Prediction",
    "RngStream",
    "SimulatorFault",
    "StageOneTrace",
    "TrainedSurrogate",
    "TruncatedNormal",
    "Uniform",
    "acquire_cl",
    "brute_mc",
    "em_fit",
    "entropy",
    "fails",
    "failure_probability",
    "fit",
    "gmm_pdf",
    "gmm_sample",
    "hartmann6",
    "herbie",
    "hybrid_mc",
    "importance_sampling",
    "ishigami",
    "kernel",
    "latin_hypercube",
    "log_marginal_likelihood",
    "make_problem",
    "marginal_pdf",
    "mc_std_err",
    "oracle_alpha",
    "plateau4",
    "predict",
    "required_m",
    "run_exhaustive_cl",
    "run_method_suite",
    "run_siis",
    "run_stage1",
    "run_stage2",
    "run_two_stage",
    "run_two_stage_proximity",
    "sample_marginal",
    "score_point",
    "select_k",
    "select_proximity",
    "select_stage2",
    "std_normal_cdf",
    "std_normal_pdf",
    "std_normal_quantile",
    "stopping_check",
    "surrogate_mc",
    "update",
]
