"""Uncertainty-aware likelihood and its gradient/Hessian estimators.

The negative log-likelihood is the quadratic form of the data residual in
the combined covariance (filter variance P plus observation noise), both
of which are diagonal here, so the "factorization" is simply the inverse
diagonal, precomputed once and reused for every theta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from odefilt.exceptions import ContractError
from odefilt.filtering import FilterOutput, ProblemSpec
from odefilt.kernels import KernelConfig, TimeGrid
from odefilt.linearization import (
    JacobianEstimate,
    KernelPrefactor,
    filtering_variance,
    kernel_prefactor,
)


@dataclass(frozen=True)
class Dataset:
    """Observations of the trajectory at grid-aligned times.

    z is the (M*d,) dimension-major stack; noise is either a scalar
    variance or an (M*d,) vector of per-observation variances.
    """

    times: np.ndarray
    z: np.ndarray
    noise: float | np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        z = np.asarray(self.z, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "z", z)
        if times.size and np.any(np.diff(times) <= 0):
            raise ValueError("data times must be strictly increasing")
        if z.size % times.size:
            raise ValueError("len(z) must be a multiple of the number of times")
        noise = self.noise
        if np.isscalar(noise):
            if not noise > 0:
                raise ValueError("noise variance must be positive")
        else:
            noise = np.asarray(noise, dtype=float)
            object.__setattr__(self, "noise", noise)
            if noise.shape != z.shape or np.any(noise <= 0):
                raise ValueError("noise vector must be positive and match z")

    @property
    def n_times(self) -> int:
        return int(self.times.size)

    @property
    def dim(self) -> int:
        return int(self.z.size // self.times.size)

    def noise_diagonal(self) -> np.ndarray:
        if np.isscalar(self.noise):
            return np.full(self.z.shape, float(self.noise))
        return np.asarray(self.noise, dtype=float)


@dataclass(frozen=True)
class GaussianPrior:
    """Gaussian parameter prior for the Bayesian estimators."""

    mu: np.ndarray
    V: np.ndarray

    def precision(self) -> np.ndarray:
        try:
            return np.linalg.inv(self.V)
        except np.linalg.LinAlgError as exc:
            raise ContractError(f"prior covariance is singular: {exc}")


@dataclass(frozen=True)
class LikelihoodModel:
    """Precomputed, theta-independent pieces of the likelihood."""

    spec: ProblemSpec
    dataset: Dataset
    grid: TimeGrid
    R: float
    cfg: KernelConfig
    prefactor: KernelPrefactor
    p_diag: np.ndarray  # (M,) filter variances at the data times
    total_var: np.ndarray  # (M*d,) tile(p_diag, d) + noise

    @property
    def inv_total_var(self) -> np.ndarray:
        return 1.0 / self.total_var


def build_likelihood_model(
    spec: ProblemSpec,
    dataset: Dataset,
    grid: TimeGrid,
    R: float = 0.0,
    cfg: KernelConfig | None = None,
) -> LikelihoodModel:
    """Precompute K and the combined variance diagonal (Alg. line 1)."""
    cfg = cfg or KernelConfig()
    if dataset.dim != spec.dim:
        raise ContractError("dataset dimension does not match the problem")
    expected = grid.data_times
    if dataset.n_times != grid.n_data or not np.allclose(
        dataset.times, expected, rtol=0, atol=1e-9 * max(1.0, grid.horizon)
    ):
        raise ContractError("dataset times are not aligned with the grid data times")
    K = kernel_prefactor(grid, R, cfg)
    p_diag = filtering_variance(grid, R, cfg)
    total = np.tile(p_diag, spec.dim) + dataset.noise_diagonal()
    if np.any(total <= 0):
        raise ContractError("combined covariance is not positive definite")
    return LikelihoodModel(
        spec=spec,
        dataset=dataset,
        grid=grid,
        R=float(R),
        cfg=cfg,
        prefactor=K,
        p_diag=p_diag,
        total_var=total,
    )


def neg_log_likelihood(model: LikelihoodModel, out: FilterOutput) -> float:
    """E = 1/2 (z - m)' (P + noise)^{-1} (z - m); +inf on non-finite means."""
    r = model.dataset.z - out.means_at_data_times()
    if not np.all(np.isfinite(r)):
        return float("inf")
    return 0.5 * float(r @ (model.inv_total_var * r))


def unaware_neg_log_likelihood(dataset: Dataset, out: FilterOutput) -> float:
    """Same quadratic form with the filter variance P dropped."""
    r = dataset.z - out.means_at_data_times()
    if not np.all(np.isfinite(r)):
        return float("inf")
    return 0.5 * float(r @ (r / dataset.noise_diagonal()))


def gradient_estimate(
    model: LikelihoodModel, out: FilterOutput, J: JacobianEstimate
) -> np.ndarray:
    """grad E = -J' (P + noise)^{-1} (z - m)."""
    if J.J.shape[0] != model.dataset.z.size:
        raise ContractError("Jacobian rows do not match the stacked data")
    r = model.dataset.z - out.means_at_data_times()
    return -J.J.T @ (model.inv_total_var * r)


def hessian_estimate(model: LikelihoodModel, J: JacobianEstimate) -> np.ndarray:
    """Hess E = J' (P + noise)^{-1} J; PSD by construction."""
    if J.J.shape[0] != model.dataset.z.size:
        raise ContractError("Jacobian rows do not match the stacked data")
    H = J.J.T @ (model.inv_total_var[:, None] * J.J)
    return 0.5 * (H + H.T)


def bayesian_gradient(
    model: LikelihoodModel,
    out: FilterOutput,
    J: JacobianEstimate,
    prior: GaussianPrior,
    theta: np.ndarray,
) -> np.ndarray:
    """Negative log-posterior gradient: grad E + V^{-1} (theta - mu)."""
    return gradient_estimate(model, out, J) + prior.precision() @ (
        np.asarray(theta, dtype=float) - prior.mu
    )


def bayesian_hessian(
    model: LikelihoodModel, J: JacobianEstimate, prior: GaussianPrior
) -> np.ndarray:
    """Negative log-posterior Hessian: Hess E + V^{-1}."""
    return hessian_estimate(model, J) + prior.precision()


def extended_design(J: np.ndarray, M: int) -> np.ndarray:
    """Design [1_M blocks | J] for the extended parameter [x0; theta].

    J is (M*d) x n; the result prepends d indicator columns of ones so
    that the product with [x0; theta] is x0 . 1 + J theta per dimension.
    """
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or (J.shape[0] % M):
        raise ContractError("J rows must be a multiple of M")
    d = J.shape[0] // M
    ones = np.kron(np.eye(d), np.ones((M, 1)))
    return np.hstack([ones, J])
