"""Optimizers and samplers driven through the full pipeline, including the
exactly-quadratic constant-field problem where Newton must one-step."""

import numpy as np
import pytest

from odefilt import (
    Dataset,
    KernelConfig,
    ProblemSpec,
    SolverConfig,
    TimeGrid,
    build_likelihood_model,
    filter_solve,
    generate_data,
    logistic,
    run,
    sweep_step_size,
)
from odefilt.solvers import MAX_CONSECUTIVE_DIVERGENCES, default_step_grid

CFG = KernelConfig(1.0)


def linear_problem():
    """x' = (theta1, theta2): the filter mean is exactly linear in theta,
    so E is an exact quadratic and the estimators are exact."""
    spec = ProblemSpec(
        dim=2, n_params=2,
        basis_fields=[lambda x: np.array([1.0, 0.0]), lambda x: np.array([0.0, 1.0])],
        basis_jacobians=[lambda x: np.zeros((2, 2))] * 2,
        x0=np.zeros(2), horizon=2.0, name="linear",
    )
    grid = TimeGrid(h=0.1, n_steps=20, data_indices=np.array([5, 10, 15, 20]))
    theta_star = np.array([1.5, -0.7])
    out = filter_solve(spec, theta_star, grid, 0.0, CFG)
    ds = Dataset(times=grid.data_times, z=out.means_at_data_times(), noise=1e-4)
    model = build_likelihood_model(spec, ds, grid, 0.0, CFG)
    return spec, grid, theta_star, ds, model


def logistic_setup(seed=0):
    b = logistic()
    grid = b.grid()
    ds = generate_data(b, np.random.default_rng(seed))
    model = build_likelihood_model(b.spec, ds, grid, 0.0, CFG)
    return b, ds, model


class TestNewton:
    def test_one_step_on_exact_quadratic(self):
        spec, grid, theta_star, ds, model = linear_problem()
        cfg = SolverConfig(method="NWT", step=1.0, budget=1)
        tr = run(spec, ds, model, cfg, np.array([5.0, 5.0]), theta_star)
        assert tr.final.rel_err < 1e-10

    def test_stationary_point_fixed(self):
        spec, grid, theta_star, ds, model = linear_problem()
        cfg = SolverConfig(method="NWT", step=1.0, budget=3)
        tr = run(spec, ds, model, cfg, theta_star, theta_star)
        assert np.allclose(tr.final.theta, theta_star, atol=1e-12)

    def test_damping_accepted(self):
        spec, grid, theta_star, ds, model = linear_problem()
        cfg = SolverConfig(method="NWT", step=1.0, budget=5, newton_damping=1e-3)
        tr = run(spec, ds, model, cfg, np.array([4.0, 4.0]), theta_star)
        assert tr.final.rel_err < 1e-3


class TestGradientDescent:
    def test_strictly_decreasing_until_tolerance(self):
        spec, grid, theta_star, ds, model = linear_problem()
        cfg = SolverConfig(method="GD", step=1e-6, budget=30)
        tr = run(spec, ds, model, cfg, np.array([3.0, 3.0]), theta_star)
        E = tr.energies()
        # strictly decreasing while far from the minimum
        assert np.all(np.diff(E[:10]) < 0)
        assert E[-1] < E[0]

    def test_from_stationary_point_unchanged(self):
        spec, grid, theta_star, ds, model = linear_problem()
        cfg = SolverConfig(method="GD", step=1e-2, budget=5)
        tr = run(spec, ds, model, cfg, theta_star, theta_star)
        assert np.allclose(tr.final.theta, theta_star, atol=1e-12)


class TestRandomSearch:
    def test_trace_non_increasing(self):
        b, ds, model = logistic_setup()
        cfg = SolverConfig(method="RS", step=0.1, budget=60, seed=1)
        tr = run(b.spec, ds, model, cfg, b.theta0, b.theta_star)
        E = tr.energies()
        assert np.all(np.diff(E) <= 0)

    def test_acceptance_flags_consistent(self):
        b, ds, model = logistic_setup()
        cfg = SolverConfig(method="RS", step=0.1, budget=20, seed=1)
        tr = run(b.spec, ds, model, cfg, b.theta0)
        for prev, rec in zip(tr.records, tr.records[1:]):
            if rec.accepted:
                assert rec.E == rec.proposal_E
            else:
                assert rec.E == prev.E


class TestSamplers:
    def test_rwm_budget_one_gives_two_records(self):
        b, ds, model = logistic_setup()
        cfg = SolverConfig(method="RWM", step=0.05, budget=1, seed=0)
        tr = run(b.spec, ds, model, cfg, b.theta0)
        assert len(tr.records) == 2

    def test_rwm_detailed_balance_bookkeeping(self):
        b, ds, model = logistic_setup()
        cfg = SolverConfig(method="RWM", step=0.05, budget=40, seed=0)
        tr = run(b.spec, ds, model, cfg, b.theta0)
        assert all(r.accepted is not None for r in tr.records[1:])

    def test_forced_burn_in_accepts_finite_proposals(self):
        b, ds, model = logistic_setup()
        cfg = SolverConfig(method="PLMC", step=0.05, budget=15, seed=0,
                           burn_in_force_accept=10)
        tr = run(b.spec, ds, model, cfg, b.theta0)
        for rec in tr.records[1:11]:
            assert rec.forced
            if np.isfinite(rec.proposal_E):
                assert rec.accepted

    def test_plmc_moves_toward_mode(self):
        b, ds, model = logistic_setup()
        cfg = SolverConfig(method="PLMC", step=0.1, budget=60, seed=0,
                           burn_in_force_accept=10)
        tr = run(b.spec, ds, model, cfg, b.theta0, b.theta_star)
        assert tr.final.E < tr.records[0].E

    def test_phmc_runs_and_improves(self):
        b, ds, model = logistic_setup()
        cfg = SolverConfig(method="PHMC", step=0.1, budget=40, seed=0,
                           burn_in_force_accept=10, hmc_leapfrog_steps=5)
        tr = run(b.spec, ds, model, cfg, b.theta0, b.theta_star)
        assert tr.final.E < tr.records[0].E

    def test_mh_correction_toggle_changes_chain(self):
        b, ds, model = logistic_setup()
        base = dict(method="PLMC", step=0.1, budget=60, seed=0)
        tr_on = run(b.spec, ds, model, SolverConfig(mh_correction=True, **base), b.theta0)
        tr_off = run(b.spec, ds, model, SolverConfig(mh_correction=False, **base), b.theta0)
        assert not np.allclose(tr_on.thetas(), tr_off.thetas())


def test_determinism_same_seed():
    b, ds, model = logistic_setup()
    for method in ("RS", "RWM", "PLMC", "PHMC"):
        cfg = SolverConfig(method=method, step=0.05, budget=15, seed=7)
        a = run(b.spec, ds, model, cfg, b.theta0)
        b2 = run(b.spec, ds, model, cfg, b.theta0)
        assert np.array_equal(a.thetas(), b2.thetas())
        assert np.array_equal(a.energies(), b2.energies())


def test_abort_after_consecutive_divergences():
    # x' = theta x^2 blows up; every evaluation diverges
    spec = ProblemSpec(
        dim=1, n_params=1,
        basis_fields=[lambda x: x**2],
        basis_jacobians=[lambda x: np.array([[2.0 * x[0]]])],
        x0=np.array([1.0]), horizon=5.0, name="blowup",
    )
    grid = TimeGrid(h=0.05, n_steps=100, data_indices=np.array([50, 100]))
    ds = Dataset(times=grid.data_times, z=np.zeros(2), noise=1e-2)
    model = build_likelihood_model(spec, ds, grid, 0.0, CFG)
    cfg = SolverConfig(method="RS", step=0.01, budget=200, seed=0)
    with np.errstate(all="ignore"):
        tr = run(spec, ds, model, cfg, np.array([5.0]))
    assert tr.aborted
    assert len(tr.records) <= MAX_CONSECUTIVE_DIVERGENCES + 2


def test_divergent_proposals_never_adopted():
    # GD/NWT stay put when the candidate evaluates to +inf
    spec = ProblemSpec(
        dim=1, n_params=1,
        basis_fields=[lambda x: x**2],
        basis_jacobians=[lambda x: np.array([[2.0 * x[0]]])],
        x0=np.array([0.1]), horizon=2.0, name="edge",
    )
    grid = TimeGrid(h=0.05, n_steps=40, data_indices=np.array([20, 40]))
    ds = Dataset(times=grid.data_times, z=np.array([0.12, 0.15]), noise=1e-4)
    model = build_likelihood_model(spec, ds, grid, 0.0, CFG)
    cfg = SolverConfig(method="GD", step=1.0, budget=10)
    with np.errstate(all="ignore"):
        tr = run(spec, ds, model, cfg, np.array([1.0]))
    assert np.all(np.isfinite(tr.energies()))


class TestConfigValidation:
    def test_unknown_method(self):
        with pytest.raises(ValueError):
            SolverConfig(method="SGD")

    def test_step_range(self):
        with pytest.raises(ValueError):
            SolverConfig(method="RS", step=2.0)
        with pytest.raises(ValueError):
            SolverConfig(method="RS", step=1e-17)
        SolverConfig(method="RS", step=1.0)
        SolverConfig(method="RS", step=1e-16)

    def test_other_knobs(self):
        with pytest.raises(ValueError):
            SolverConfig(method="RS", budget=-1)
        with pytest.raises(ValueError):
            SolverConfig(method="PHMC", hmc_leapfrog_steps=0)
        with pytest.raises(ValueError):
            SolverConfig(method="NWT", newton_damping=-1.0)


def test_sweep_returns_best_of_grid():
    b, ds, model = logistic_setup()
    cfg = SolverConfig(method="RS", budget=20, seed=0)
    best_step, best_trace, traces = sweep_step_size(
        b.spec, ds, model, cfg, b.theta0, b.theta_star, steps=(1e-3, 1e-2, 1e-1)
    )
    assert best_step in (1e-3, 1e-2, 1e-1)
    assert len(traces) == 3
    assert best_trace.final.E == min(t.final.E for t in traces.values())


def test_default_step_grid_decades():
    grid = default_step_grid()
    assert grid[0] == 1e-16 and grid[-1] == 1.0
    assert len(grid) == 17
