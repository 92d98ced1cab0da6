"""Kernel prefactor, Jacobian estimate, GP-form equivalence and the
finite-difference oracles."""

import numpy as np
import pytest

from odefilt import (
    KernelConfig,
    ProblemSpec,
    TimeGrid,
    filter_solve,
    filtering_variance,
    jacobian_estimate,
    kernel_prefactor,
    logistic,
    lotka_volterra_mild,
    sensitivity_fd,
    true_jacobian_fd,
)
from odefilt.exceptions import ContractError
from odefilt.linearization import apply_prefactor, gp_form_means

CFG = KernelConfig(1.0)


def constant_field_spec(dim=1):
    return ProblemSpec(
        dim=dim, n_params=1,
        basis_fields=[lambda x: np.ones(dim)],
        basis_jacobians=[lambda x: np.zeros((dim, dim))],
        x0=np.zeros(dim), horizon=2.0, name="const",
    )


def test_prefactor_shape_and_padding():
    grid = TimeGrid(h=0.1, n_steps=30, data_indices=np.array([5, 15, 30]))
    K = kernel_prefactor(grid, 1e-10, CFG)
    assert K.matrix.shape == (3, 30)
    # row i only involves steps up to its own data index
    assert np.all(K.matrix[0, 5:] == 0.0)
    assert np.all(K.matrix[1, 15:] == 0.0)


def test_prefactor_requires_data():
    grid = TimeGrid(h=0.1, n_steps=10)
    with pytest.raises(ContractError):
        kernel_prefactor(grid, 0.0, CFG)
    with pytest.raises(ContractError):
        filtering_variance(grid, 0.0, CFG)


def test_kalman_gp_equivalence_on_logistic():
    # the filter means/variances at data times coincide with the GP-form
    # x0 + drift + K (Y theta) and P(t_i) built from the prior kernels
    b = logistic()
    grid = TimeGrid(h=0.1, n_steps=30, data_indices=np.arange(3, 31, 3))
    R = 1e-10
    out = filter_solve(b.spec, b.theta_star, grid, R, CFG)
    K = kernel_prefactor(grid, R, CFG)

    gp = gp_form_means(K, out)
    kalman = out.means_at_data_times()
    assert np.linalg.norm(gp - kalman) / np.linalg.norm(kalman) < 1e-8

    p_gp = filtering_variance(grid, R, CFG)
    p_kalman = out.variances_at_data_times()
    assert np.allclose(p_gp, p_kalman, rtol=1e-8, atol=1e-14)


def test_jacobian_variants_differ_by_drift_term():
    # drift_corrected = literal + t_i * f_j(x0), exactly
    b = logistic()
    grid = b.grid()
    out = filter_solve(b.spec, b.theta_star, grid, 0.0, CFG)
    K = kernel_prefactor(grid, 0.0, CFG)
    lit = jacobian_estimate(K, out, "literal").J
    drift = jacobian_estimate(K, out, "drift_corrected").J
    expected = np.outer(grid.data_times, out.basis_at_x0[:, 0])
    assert np.allclose(drift - lit, expected, rtol=1e-12, atol=1e-12)


def test_drift_variant_exact_on_constant_field():
    # x' = theta: literal KY vanishes (Y = 0), the drift term carries
    # the whole Jacobian t_i * f(x0)
    spec = constant_field_spec()
    grid = TimeGrid(h=0.1, n_steps=20, data_indices=np.array([10, 20]))
    theta = np.array([2.0])
    out = filter_solve(spec, theta, grid, 0.0, CFG)
    K = kernel_prefactor(grid, 0.0, CFG)
    dm = true_jacobian_fd(spec, theta, grid, 0.0, CFG)

    lit = jacobian_estimate(K, out, "literal").J
    drift = jacobian_estimate(K, out, "drift_corrected").J
    assert np.linalg.norm(lit) == 0.0
    assert np.allclose(drift, dm, rtol=1e-8)
    assert np.allclose(drift[:, 0], grid.data_times)


def test_unknown_variant_rejected():
    b = logistic()
    grid = b.grid()
    out = filter_solve(b.spec, b.theta_star, grid, 0.0, CFG)
    K = kernel_prefactor(grid, 0.0, CFG)
    with pytest.raises(ContractError):
        jacobian_estimate(K, out, "bogus")


def test_prefactor_grid_mismatch_rejected():
    b = logistic()
    out = filter_solve(b.spec, b.theta_star, b.grid(), 0.0, CFG)
    other = TimeGrid(h=0.1, n_steps=20, data_indices=np.array([20]))
    K = kernel_prefactor(other, 0.0, CFG)
    with pytest.raises(ContractError):
        jacobian_estimate(K, out)
    with pytest.raises(ContractError):
        apply_prefactor(K, out.Y)


def decomposition_error(spec, theta, grid, R=0.0):
    """||Dm_fd - (J + K S_fd)||_F / ||Dm_fd||_F."""
    K = kernel_prefactor(grid, R, CFG)
    out = filter_solve(spec, theta, grid, R, CFG)
    J = jacobian_estimate(K, out).J
    dm = true_jacobian_fd(spec, theta, grid, R, CFG)
    S = sensitivity_fd(spec, theta, grid, R, CFG)
    return np.linalg.norm(dm - (J + apply_prefactor(K, S.S))) / np.linalg.norm(dm)


def test_jacobian_decomposition_identity_logistic():
    b = logistic()
    grid = TimeGrid(h=0.1, n_steps=30, data_indices=np.arange(3, 31, 3))
    assert decomposition_error(b.spec, b.theta_star, grid) <= 1e-3
    assert decomposition_error(b.spec, b.theta0, grid) <= 1e-3


def test_jacobian_decomposition_identity_lv():
    b = lotka_volterra_mild()
    grid = TimeGrid(h=0.1, n_steps=45, data_indices=np.arange(5, 46, 5))
    assert decomposition_error(b.spec, b.theta_star, grid) <= 1e-3


def test_jacobian_error_shrinks_with_h():
    # the cheap estimate converges to the true Jacobian as h -> 0
    b = logistic()
    errs = []
    for h in (0.1, 0.05, 0.025, 0.0125):
        grid = b.grid(h)
        out = filter_solve(b.spec, b.theta_star, grid, 0.0, CFG)
        K = kernel_prefactor(grid, 0.0, CFG)
        J = jacobian_estimate(K, out).J
        dm = true_jacobian_fd(b.spec, b.theta_star, grid, 0.0, CFG)
        errs.append(np.linalg.norm(J - dm))
    for a, b_ in zip(errs, errs[1:]):
        assert b_ <= 1.1 * a  # non-increasing with 10% slack


def test_sensitivity_shapes():
    b = logistic()
    grid = TimeGrid(h=0.1, n_steps=10, data_indices=np.array([5, 10]))
    S = sensitivity_fd(b.spec, b.theta_star, grid, 0.0, CFG)
    assert S.S.shape == (1, 10, 2)
    assert S.lambdas.shape == (1, 10, 2, 2)
    assert S.stacked.shape == (10, 2)


def test_fd_delta_validation():
    b = logistic()
    grid = b.grid()
    with pytest.raises(ValueError):
        true_jacobian_fd(b.spec, b.theta_star, grid, 0.0, CFG, delta=0.0)


def test_filtering_variance_positive_and_increasing_headroom():
    grid = TimeGrid(h=0.1, n_steps=30, data_indices=np.arange(3, 31, 3))
    p = filtering_variance(grid, 0.0, CFG)
    assert np.all(p >= 0)
    # more observations shrink the variance relative to the prior marginal
    from odefilt import k as k_prior
    prior = np.array([k_prior(t, t, CFG) for t in grid.data_times])
    assert np.all(p <= prior + 1e-12)
