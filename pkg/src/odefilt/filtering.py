"""Gaussian ODE filter with a once-integrated Brownian motion prior.

Per state dimension the filter tracks (position, derivative) with a shared
2x2 transition; vector-field evaluations at the predictive mean act as
derivative observations. The covariance recursion never touches the data,
so a single 2x2 covariance is shared across all state dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from odefilt.exceptions import CalibrationError, FilterDivergedError
from odefilt.kernels import KernelConfig, TimeGrid

# epsilon floor applied to R inside inversions only (R >= 0 is allowed)
R_FLOOR = 1e-12


@dataclass(frozen=True)
class ProblemSpec:
    """An ODE whose field is linear in the parameters.

    The full field is f(x, theta) = sum_i theta_i * basis_fields[i](x);
    basis_jacobians[i](x) is the d x d state-Jacobian of basis_fields[i].
    """

    dim: int
    n_params: int
    basis_fields: Sequence[Callable[[np.ndarray], np.ndarray]]
    basis_jacobians: Sequence[Callable[[np.ndarray], np.ndarray]]
    x0: np.ndarray
    horizon: float
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if self.dim < 1 or self.n_params < 1:
            raise ValueError("dim and n_params must be positive")
        if len(self.basis_fields) != self.n_params:
            raise ValueError("need one basis field per parameter")
        if len(self.basis_jacobians) != self.n_params:
            raise ValueError("need one basis Jacobian per parameter")
        if self.x0.shape != (self.dim,):
            raise ValueError(f"x0 must have shape ({self.dim},)")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    def basis_values(self, x: np.ndarray) -> np.ndarray:
        """Stack f_i(x) into an (n_params, dim) array."""
        return np.stack([np.asarray(f(x), dtype=float) for f in self.basis_fields])

    def field(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Full vector field f(x, theta)."""
        return np.asarray(theta, dtype=float) @ self.basis_values(x)

    def field_jacobian(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """State-Jacobian of the full field, a d x d matrix."""
        jacs = np.stack([np.asarray(J(x), dtype=float) for J in self.basis_jacobians])
        return np.tensordot(np.asarray(theta, dtype=float), jacs, axes=1)


@dataclass(frozen=True)
class TransitionModel:
    """Discrete-time (A, Q) of the integrated Brownian motion prior."""

    A: np.ndarray
    Q: np.ndarray
    h: float


def discretize_prior(h: float, cfg: KernelConfig) -> TransitionModel:
    """Exact discretization of the prior SDE over one step.

    A = [[1, h], [0, 1]], Q = sigma^2 * [[h^3/3, h^2/2], [h^2/2, h]].
    """
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h}")
    s2 = cfg.sigma_dif**2
    A = np.array([[1.0, h], [0.0, 1.0]])
    Q = s2 * np.array([[h**3 / 3.0, h**2 / 2.0], [h**2 / 2.0, h]])
    return TransitionModel(A=A, Q=Q, h=h)


@dataclass(frozen=True)
class FilterOutput:
    """Everything the forward solve produces.

    Arrays are laid out per state dimension: filter_means is (d, N+1)
    positions, predictive_means (d, N), Y (d, N, n). filter_variances is a
    single (N+1,) vector because the covariance recursion is shared across
    dimensions (and hence independent of theta).
    """

    grid: TimeGrid
    theta: np.ndarray
    measurement_var: float
    cfg: KernelConfig
    filter_means: np.ndarray
    predictive_means: np.ndarray
    filter_variances: np.ndarray
    Y: np.ndarray
    basis_at_x0: np.ndarray  # (n, d), the f_j(x0) used in Y
    innovations: np.ndarray  # (d, N) residuals y_i - H m^-_i
    innovation_vars: np.ndarray  # (N,) shared across dimensions

    @property
    def dim(self) -> int:
        return self.filter_means.shape[0]

    @property
    def stacked_Y(self) -> np.ndarray:
        """Y stacked dimension-major into an (N*d, n) matrix."""
        d, N, n = self.Y.shape
        return self.Y.reshape(d * N, n)

    def means_at_data_times(self) -> np.ndarray:
        """Filtering-mean positions at the data times, stacked
        dimension-major into an (M*d,) vector."""
        return self.filter_means[:, self.grid.data_indices].reshape(-1)

    def variances_at_data_times(self) -> np.ndarray:
        return self.filter_variances[self.grid.data_indices]


def filter_solve(
    spec: ProblemSpec,
    theta: np.ndarray,
    grid: TimeGrid,
    R: float = 0.0,
    cfg: KernelConfig | None = None,
) -> FilterOutput:
    """Run the Gaussian ODE filter forward over the grid.

    Initializes at (x0, f(x0, theta)) with zero covariance, predicts with
    the discretized prior and updates on the derivative observation
    y_i = f(predictive position, theta) with observation noise R.
    Raises FilterDivergedError (with the step index) on blow-up.
    """
    cfg = cfg or KernelConfig()
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    if R < 0:
        raise ValueError("measurement variance R must be nonnegative")
    if grid.horizon > spec.horizon * (1.0 + 1e-9):
        raise ValueError(
            f"grid horizon {grid.horizon} exceeds problem horizon {spec.horizon}"
        )

    trans = discretize_prior(grid.h, cfg)
    A, Q = trans.A, trans.Q
    d, n, N = spec.dim, spec.n_params, grid.n_steps

    basis0 = spec.basis_values(spec.x0)  # (n, d)
    mean = np.vstack([spec.x0, theta @ basis0])  # (2, d)
    cov = np.zeros((2, 2))

    filter_means = np.empty((d, N + 1))
    predictive_means = np.empty((d, N))
    filter_variances = np.empty(N + 1)
    Y = np.empty((d, N, n))
    innovations = np.empty((d, N))
    innovation_vars = np.empty(N)

    filter_means[:, 0] = spec.x0
    filter_variances[0] = 0.0

    for i in range(1, N + 1):
        m_pred = A @ mean
        P_pred = A @ cov @ A.T + Q
        P_pred = 0.5 * (P_pred + P_pred.T)

        pos_pred = m_pred[0]
        if not np.all(np.isfinite(pos_pred)):
            raise FilterDivergedError(step=i)
        predictive_means[:, i - 1] = pos_pred

        basis = spec.basis_values(pos_pred)  # (n, d)
        if not np.all(np.isfinite(basis)):
            raise FilterDivergedError(step=i)
        y = theta @ basis  # (d,)
        Y[:, i - 1, :] = (basis - basis0).T

        resid = y - m_pred[1]
        s = P_pred[1, 1] + R
        innovations[:, i - 1] = resid
        innovation_vars[i - 1] = s

        gain = P_pred[:, 1] / max(s, R_FLOOR)
        mean = m_pred + np.outer(gain, resid)
        # Joseph form for numerical symmetry
        ikh = np.eye(2) - np.outer(gain, np.array([0.0, 1.0]))
        cov = ikh @ P_pred @ ikh.T + R * np.outer(gain, gain)
        cov = 0.5 * (cov + cov.T)

        if not np.all(np.isfinite(mean)):
            raise FilterDivergedError(step=i)
        filter_means[:, i] = mean[0]
        filter_variances[i] = cov[0, 0]

    return FilterOutput(
        grid=grid,
        theta=theta,
        measurement_var=R,
        cfg=cfg,
        filter_means=filter_means,
        predictive_means=predictive_means,
        filter_variances=filter_variances,
        Y=Y,
        basis_at_x0=basis0,
        innovations=innovations,
        innovation_vars=innovation_vars,
    )


def calibrate_sigma_dif(output: FilterOutput, floor: float = 1e-8) -> float:
    """Global quasi-ML estimate of the diffusion scale.

    Expects a solve run with provisional sigma_dif = 1 and returns
    sigma_hat = sqrt( sum_i r_i' r_i / S_i / (N * d) ) over the stored
    innovation residuals. Vanishing residuals yield the floor value.
    """
    if np.any(output.innovation_vars <= 0):
        raise CalibrationError("non-positive innovation variance")
    N = output.grid.n_steps
    d = output.dim
    sq = np.sum(output.innovations**2 / output.innovation_vars[None, :]) / (N * d)
    return max(float(np.sqrt(sq)), floor)
