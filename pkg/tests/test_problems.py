"""Benchmark registry, reference solver and data generation."""

import numpy as np
import pytest

from odefilt import (
    generate_data,
    get_benchmark,
    logistic,
    lotka_volterra,
    lotka_volterra_mild,
    reference_solution,
)
from odefilt.problems import BENCHMARK_NAMES, DATA_GENERATORS


def test_registry_names():
    assert set(BENCHMARK_NAMES) == {"logistic", "lv", "lv_mild", "pst", "guiy"}
    for name in BENCHMARK_NAMES:
        b = get_benchmark(name)
        assert b.spec.dim >= 1
        assert b.theta_star.shape == (b.spec.n_params,)
        assert b.theta0.shape == (b.spec.n_params,)


def test_unknown_benchmark():
    with pytest.raises(KeyError):
        get_benchmark("lorenz")


def test_grids_align_with_data_times():
    for name in BENCHMARK_NAMES:
        b = get_benchmark(name)
        grid = b.grid()
        assert np.allclose(grid.data_times, b.data_times)
        inf = b.inference_grid()
        assert inf.n_steps == grid.data_indices[-1]
        assert np.array_equal(inf.data_indices, grid.data_indices)


def test_grid_misaligned_h_rejected():
    b = logistic()
    with pytest.raises(ValueError):
        b.grid(0.07)  # horizon 3.0 not a multiple
    with pytest.raises(ValueError):
        b.grid(0.4)  # data every 0.3 not on this grid


def test_reference_solution_logistic_closed_form():
    # x' = a x - b x^2 has the closed form
    # x(t) = K / (1 + (K/x0 - 1) exp(-a t)) with K = a/b
    b = logistic()
    a_, b_ = b.theta_star
    K = a_ / b_
    x0 = b.spec.x0[0]
    times = np.linspace(0.2, 3.0, 12)
    exact = K / (1.0 + (K / x0 - 1.0) * np.exp(-a_ * times))
    ref = reference_solution(b.spec, b.theta_star, times)
    assert np.allclose(ref[0], exact, rtol=1e-8)


def test_guiy_conserves_enzyme():
    # total enzyme (free + complexed, both compartments) is invariant
    b = get_benchmark("guiy")
    times = np.linspace(0.0, 100.0, 21)
    ref = reference_solution(b.spec, b.theta_star, times)
    enzyme = ref[[2, 3, 5, 6, 7, 8]].sum(axis=0)
    assert np.allclose(enzyme, enzyme[0], rtol=1e-8)


def test_basis_jacobians_match_fd():
    rng = np.random.default_rng(0)
    for name in BENCHMARK_NAMES:
        spec = get_benchmark(name).spec
        x = rng.uniform(0.2, 2.0, size=spec.dim)
        eps = 1e-6
        for f, Jf in zip(spec.basis_fields, spec.basis_jacobians):
            J = np.asarray(Jf(x), dtype=float)
            for j in range(spec.dim):
                step = np.zeros(spec.dim)
                step[j] = eps
                fd = (np.asarray(f(x + step)) - np.asarray(f(x - step))) / (2 * eps)
                assert np.allclose(J[:, j], fd, rtol=1e-5, atol=1e-8), (name, j)


def test_generate_data_generators_differ():
    b = lotka_volterra_mild()
    rng_a = np.random.default_rng(0)
    rng_b = np.random.default_rng(0)
    oracle = generate_data(b, rng_a, "oracle")
    filt = generate_data(b, rng_b, "filter")
    assert oracle.z.shape == filt.z.shape
    assert not np.allclose(oracle.z, filt.z)
    with pytest.raises(ValueError):
        generate_data(b, np.random.default_rng(0), "resample")
    assert set(DATA_GENERATORS) == {"oracle", "filter"}


def test_generate_data_deterministic_per_seed():
    b = logistic()
    a = generate_data(b, np.random.default_rng(5))
    c = generate_data(b, np.random.default_rng(5))
    assert np.array_equal(a.z, c.z)


def test_generate_data_noise_statistics():
    b = logistic()
    reps = np.stack(
        [generate_data(b, np.random.default_rng(s)).z for s in range(400)]
    )
    clean = reference_solution(b.spec, b.theta_star, b.data_times)[0]
    resid = reps - clean
    assert abs(resid.mean()) < 3 * np.sqrt(b.noise / reps.size)
    assert np.std(resid) == pytest.approx(np.sqrt(b.noise), rel=0.15)


def test_relative_noise_dataset():
    b = lotka_volterra_mild()
    assert b.relative_noise == 1e-3
    ds = generate_data(b, np.random.default_rng(0), "filter")
    noise = np.asarray(ds.noise)
    assert noise.shape == ds.z.shape
    # noise std is 0.1% of the clean signal: all entries positive, and
    # the predator entries (larger values) get larger variances
    assert np.all(noise > 0)
    M = b.data_times.size
    assert noise[M:].mean() > noise[:M].mean()


def test_mild_lv_same_dynamics_as_paper_instance():
    mild, paper = lotka_volterra_mild(), lotka_volterra()
    assert np.array_equal(mild.theta_star, paper.theta_star)
    assert np.array_equal(mild.theta0, paper.theta0)
    assert np.array_equal(mild.data_times, paper.data_times)
    assert mild.h == paper.h
    rng = np.random.default_rng(2)
    x = rng.uniform(0.1, 3.0, size=2)
    th = rng.uniform(0.1, 2.0, size=4)
    assert np.allclose(mild.spec.field(x, th), paper.spec.field(x, th))


def test_reference_solution_failure_surfaces():
    b = get_benchmark("lv")
    # divergent parameters make the adaptive solver give up
    with pytest.raises(RuntimeError):
        with np.errstate(all="ignore"):
            reference_solution(b.spec, np.array([50.0, -50.0, 0.1, 50.0]), [5.0])
