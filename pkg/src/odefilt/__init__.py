"""ODE inverse problems via Gaussian ODE filtering.

The forward map is solved with a Kalman filter under a once-integrated
Brownian motion prior, which yields a Gaussian likelihood approximation
together with cheap gradient/Hessian estimators of its negative log.
These plug into first- and second-order optimizers and preconditioned
MCMC samplers.
"""

from odefilt.exceptions import CalibrationError, FilterDivergedError
from odefilt.kernels import KernelConfig, TimeGrid, ddk, dk, k, kd
from odefilt.filtering import (
    FilterOutput,
    ProblemSpec,
    TransitionModel,
    calibrate_sigma_dif,
    discretize_prior,
    filter_solve,
)
from odefilt.linearization import (
    JacobianEstimate,
    KernelPrefactor,
    SensitivityDecomposition,
    filtering_variance,
    jacobian_estimate,
    kernel_prefactor,
    sensitivity_fd,
    true_jacobian_fd,
)
from odefilt.likelihood import (
    Dataset,
    GaussianPrior,
    LikelihoodModel,
    bayesian_gradient,
    bayesian_hessian,
    build_likelihood_model,
    extended_design,
    gradient_estimate,
    hessian_estimate,
    neg_log_likelihood,
    unaware_neg_log_likelihood,
)
from odefilt.solvers import SolverConfig, Trace, TraceRecord, run, sweep_step_size
from odefilt.problems import (
    Benchmark,
    generate_data,
    get_benchmark,
    guiy,
    logistic,
    lotka_volterra,
    lotka_volterra_mild,
    pst_linearized,
    reference_solution,
)

__all__ = [
    "Benchmark",
    "CalibrationError",
    "Dataset",
    "FilterDivergedError",
    "FilterOutput",
    "GaussianPrior",
    "JacobianEstimate",
    "KernelConfig",
    "KernelPrefactor",
    "LikelihoodModel",
    "ProblemSpec",
    "SensitivityDecomposition",
    "SolverConfig",
    "TimeGrid",
    "Trace",
    "TraceRecord",
    "TransitionModel",
    "bayesian_gradient",
    "bayesian_hessian",
    "build_likelihood_model",
    "calibrate_sigma_dif",
    "ddk",
    "discretize_prior",
    "dk",
    "extended_design",
    "filter_solve",
    "filtering_variance",
    "generate_data",
    "get_benchmark",
    "gradient_estimate",
    "guiy",
    "hessian_estimate",
    "jacobian_estimate",
    "k",
    "kd",
    "kernel_prefactor",
    "logistic",
    "lotka_volterra",
    "lotka_volterra_mild",
    "neg_log_likelihood",
    "pst_linearized",
    "reference_solution",
    "run",
    "sensitivity_fd",
    "sweep_step_size",
    "true_jacobian_fd",
    "unaware_neg_log_likelihood",
]
