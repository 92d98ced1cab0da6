"""Kernel prefactor, Jacobian estimator and sensitivity machinery.

Assembles the theta-independent kernel prefactor K, the cheap Jacobian
estimate of the filtering mean w.r.t. the parameters, the GP-form
filtering variance, and finite-difference oracles for the true Jacobian
and the sensitivity correction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg

from odefilt.exceptions import ContractError
from odefilt.filtering import R_FLOOR, FilterOutput, ProblemSpec, filter_solve
from odefilt.kernels import KernelConfig, TimeGrid, ddk, k, kd

JacobianVariant = Literal["literal", "drift_corrected"]
DEFAULT_VARIANT: JacobianVariant = "drift_corrected"


@dataclass(frozen=True)
class KernelPrefactor:
    """M x N matrix whose i-th row is the zero-padded solve
    [Gram(h:t_i) + R I]^{-1} kd(h:t_i, t_i). Independent of theta."""

    matrix: np.ndarray
    grid: TimeGrid
    R: float
    cfg: KernelConfig


@dataclass(frozen=True)
class JacobianEstimate:
    """Estimate of the (M*d) x n Jacobian of theta -> filtering means.

    variant "literal" is the plain product K Y; "drift_corrected" adds the
    position drift t_i * f_j(x0) implied by the filter initialization.
    """

    J: np.ndarray
    variant: JacobianVariant
    theta_used: np.ndarray


@dataclass(frozen=True)
class SensitivityDecomposition:
    """Sensitivity correction S with per-step coefficient matrices.

    S is stored per dimension as (d, N, n); lambdas[dim, j, k, l] is the
    dim-component of Dfl(m^-(jh)) @ d m^-(jh) / d theta_k.
    """

    S: np.ndarray
    lambdas: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        d, N, n = self.S.shape
        return self.S.reshape(d * N, n)


def _gram_cholesky(grid: TimeGrid, R: float, cfg: KernelConfig) -> np.ndarray:
    """Lower Cholesky factor of the full derivative-kernel Gram matrix up
    to the last data time (plus the R floor on the diagonal)."""
    l_max = int(grid.data_indices[-1])
    tau = np.arange(1, l_max + 1) * grid.h
    gram = ddk(tau[:, None], tau[None, :], cfg)
    gram = gram + max(R, R_FLOOR) * np.eye(l_max)
    try:
        return scipy.linalg.cholesky(gram, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular derivative Gram matrix: {exc}")


def _solve_leading(L: np.ndarray, rhs: np.ndarray, l: int) -> np.ndarray:
    # the leading l x l block of L is the Cholesky factor of the leading
    # principal submatrix of the Gram, so one factorization serves all rows
    z = scipy.linalg.solve_triangular(L[:l, :l], rhs, lower=True)
    return scipy.linalg.solve_triangular(L[:l, :l].T, z, lower=False)


def kernel_prefactor(grid: TimeGrid, R: float, cfg: KernelConfig) -> KernelPrefactor:
    """Assemble the kernel prefactor K from the prior kernels."""
    if grid.n_data == 0:
        raise ContractError("grid has no data indices")
    L = _gram_cholesky(grid, R, cfg)
    tau = np.arange(1, int(grid.data_indices[-1]) + 1) * grid.h
    K = np.zeros((grid.n_data, grid.n_steps))
    for i, l_i in enumerate(grid.data_indices):
        t_i = l_i * grid.h
        kd_vec = kd(t_i, tau[:l_i], cfg)
        K[i, :l_i] = _solve_leading(L, kd_vec, int(l_i))
    return KernelPrefactor(matrix=K, grid=grid, R=float(R), cfg=cfg)


def filtering_variance(grid: TimeGrid, R: float, cfg: KernelConfig) -> np.ndarray:
    """GP-posterior position variances at the data times (length M).

    P(t_i) = k(t_i, t_i) - kd' [Gram + R I]^{-1} kd.
    """
    if grid.n_data == 0:
        raise ContractError("grid has no data indices")
    L = _gram_cholesky(grid, R, cfg)
    tau = np.arange(1, int(grid.data_indices[-1]) + 1) * grid.h
    out = np.empty(grid.n_data)
    for i, l_i in enumerate(grid.data_indices):
        t_i = l_i * grid.h
        kd_vec = kd(t_i, tau[:l_i], cfg)
        z = scipy.linalg.solve_triangular(L[: int(l_i), : int(l_i)], kd_vec, lower=True)
        out[i] = k(t_i, t_i, cfg) - z @ z
    return out


def jacobian_estimate(
    K: KernelPrefactor,
    out: FilterOutput,
    variant: JacobianVariant = DEFAULT_VARIANT,
) -> JacobianEstimate:
    """J = K Y per state dimension, optionally with the drift correction
    D[(i, dim), j] = t_i * f_j(x0)_dim, stacked dimension-major."""
    d, N, n = out.Y.shape
    if K.matrix.shape[1] != N:
        raise ContractError(
            f"prefactor covers {K.matrix.shape[1]} steps, filter output has {N}"
        )
    blocks = []
    data_times = K.grid.data_times
    for dim in range(d):
        J_dim = K.matrix @ out.Y[dim]  # (M, n)
        if variant == "drift_corrected":
            J_dim = J_dim + np.outer(data_times, out.basis_at_x0[:, dim])
        elif variant != "literal":
            raise ContractError(f"unknown Jacobian variant {variant!r}")
        blocks.append(J_dim)
    return JacobianEstimate(J=np.vstack(blocks), variant=variant, theta_used=out.theta)


def apply_prefactor(K: KernelPrefactor, per_dim: np.ndarray) -> np.ndarray:
    """Multiply K onto a (d, N, n) array block-wise, returning the
    dimension-major (M*d, n) result (used for the K S correction)."""
    if per_dim.shape[1] != K.matrix.shape[1]:
        raise ContractError("grid length mismatch between K and the factor")
    return np.vstack([K.matrix @ block for block in per_dim])


def gp_form_means(K: KernelPrefactor, out: FilterOutput, variant: JacobianVariant = DEFAULT_VARIANT) -> np.ndarray:
    """Reconstruct the filtering means at data times from the GP form
    x0 (+ drift) + K (Y theta), stacked dimension-major."""
    d, N, n = out.Y.shape
    theta = out.theta
    data_times = K.grid.data_times
    pieces = []
    for dim in range(d):
        base = np.full(K.grid.n_data, out.filter_means[dim, 0])
        if variant == "drift_corrected":
            base = base + data_times * (out.basis_at_x0[:, dim] @ theta)
        pieces.append(base + K.matrix @ (out.Y[dim] @ theta))
    return np.concatenate(pieces)


def _fd_deltas(theta: np.ndarray, delta: float | None) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if delta is not None:
        if not delta > 0:
            raise ValueError("delta must be positive")
        return np.full(theta.shape, float(delta))
    return 1e-6 * np.maximum(1.0, np.abs(theta))


def true_jacobian_fd(
    spec: ProblemSpec,
    theta: np.ndarray,
    grid: TimeGrid,
    R: float,
    cfg: KernelConfig,
    delta: float | None = None,
) -> np.ndarray:
    """Central-difference oracle for the Jacobian of the filtering means at
    the data times, an (M*d) x n matrix."""
    theta = np.asarray(theta, dtype=float)
    deltas = _fd_deltas(theta, delta)
    cols = []
    for kk in range(theta.size):
        step = np.zeros_like(theta)
        step[kk] = deltas[kk]
        hi = filter_solve(spec, theta + step, grid, R, cfg).means_at_data_times()
        lo = filter_solve(spec, theta - step, grid, R, cfg).means_at_data_times()
        cols.append((hi - lo) / (2.0 * deltas[kk]))
    return np.column_stack(cols)


def sensitivity_fd(
    spec: ProblemSpec,
    theta: np.ndarray,
    grid: TimeGrid,
    R: float,
    cfg: KernelConfig,
    delta: float | None = None,
) -> SensitivityDecomposition:
    """Sensitivity correction with parameter derivatives of the predictive
    means obtained by central differences.

    lambdas[dim, j, k, l] = [ Dfl(m^-(jh)) @ d m^-(jh)/d theta_k ]_dim and
    the rows of S are Lambda_j' theta per dimension.
    """
    theta = np.asarray(theta, dtype=float)
    deltas = _fd_deltas(theta, delta)
    d, n, N = spec.dim, spec.n_params, grid.n_steps

    base = filter_solve(spec, theta, grid, R, cfg)

    # dpm[k, :, j] = d m^-(jh) / d theta_k, shape (n, d, N)
    dpm = np.empty((n, d, N))
    for kk in range(n):
        step = np.zeros_like(theta)
        step[kk] = deltas[kk]
        hi = filter_solve(spec, theta + step, grid, R, cfg).predictive_means
        lo = filter_solve(spec, theta - step, grid, R, cfg).predictive_means
        dpm[kk] = (hi - lo) / (2.0 * deltas[kk])

    lambdas = np.empty((d, N, n, n))
    for j in range(N):
        x = base.predictive_means[:, j]
        jacs = np.stack([np.asarray(Df(x), dtype=float) for Df in spec.basis_jacobians])
        # (l, dim_out, dim_in) x (k, dim_in) -> (dim_out, k, l)
        prod = np.einsum("lab,kb->akl", jacs, dpm[:, :, j])
        lambdas[:, j] = prod

    # d/dtheta_k of the residual row j is sum_l lambda[j,k,l] theta_l + Y[j,k],
    # so the sensitivity rows contract lambda with theta over its second index
    S = np.einsum("djkl,l->djk", lambdas, theta)
    return SensitivityDecomposition(S=S, lambdas=lambdas)
