"""Optimizers and samplers driven by the estimated gradients/Hessians.

One generic loop: precompute K and the combined variance once (that lives
in the LikelihoodModel), then per iteration run a single forward solve for
the candidate parameter, form J = K Y and the gradient/Hessian estimates,
and update with the chosen method. Divergent solves map to E = +inf with
zero gradient and identity Hessian so samplers reject and optimizers stall
instead of crashing.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from odefilt.exceptions import FilterDivergedError
from odefilt.filtering import ProblemSpec, filter_solve
from odefilt.likelihood import (
    Dataset,
    LikelihoodModel,
    gradient_estimate,
    hessian_estimate,
    neg_log_likelihood,
)
from odefilt.linearization import DEFAULT_VARIANT, jacobian_estimate

METHODS = ("RS", "GD", "NWT", "RWM", "PLMC", "PHMC")
MAX_CONSECUTIVE_DIVERGENCES = 50
STEP_RANGE = (1e-16, 1.0)


@dataclass(frozen=True)
class SolverConfig:
    """Method selection plus the knobs shared by all methods.

    step is the step size (optimizers) or proposal width rho (samplers);
    the tuning interval is [1e-16, 1]. burn_in_force_accept makes the
    samplers accept their first k proposals unconditionally.
    """

    method: str
    step: float = 1e-2
    budget: int = 100
    seed: int = 0
    burn_in_force_accept: int = 0
    hmc_leapfrog_steps: int = 5
    newton_damping: float = 0.0
    mh_correction: bool = True
    jac_variant: str = DEFAULT_VARIANT

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if not (STEP_RANGE[0] <= self.step <= STEP_RANGE[1]) and self.step != 0.0:
            raise ValueError(f"step/width must lie in [{STEP_RANGE[0]}, {STEP_RANGE[1]}]")
        if self.budget < 0:
            raise ValueError("budget must be nonnegative")
        if self.hmc_leapfrog_steps < 1:
            raise ValueError("hmc_leapfrog_steps must be positive")
        if self.newton_damping < 0:
            raise ValueError("newton_damping must be nonnegative")


@dataclass(frozen=True)
class TraceRecord:
    index: int
    theta: np.ndarray
    E: float
    rel_err: Optional[float]
    accepted: Optional[bool]
    proposal_E: Optional[float]
    wall_ms: float
    forced: bool = False


@dataclass
class Trace:
    method: str
    records: list[TraceRecord] = field(default_factory=list)
    aborted: bool = False

    def thetas(self) -> np.ndarray:
        return np.stack([r.theta for r in self.records])

    def energies(self) -> np.ndarray:
        return np.array([r.E for r in self.records])

    def rel_errs(self) -> np.ndarray:
        return np.array(
            [r.rel_err if r.rel_err is not None else np.nan for r in self.records]
        )

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]


@dataclass
class _Eval:
    theta: np.ndarray
    E: float
    grad: np.ndarray
    hess: np.ndarray
    diverged: bool


def _evaluate(spec: ProblemSpec, model: LikelihoodModel, config: SolverConfig, theta) -> _Eval:
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    try:
        out = filter_solve(spec, theta, model.grid, model.R, model.cfg)
    except (FilterDivergedError, ValueError, FloatingPointError):
        return _Eval(theta, float("inf"), np.zeros(n), np.eye(n), True)
    J = jacobian_estimate(model.prefactor, out, config.jac_variant)
    E = neg_log_likelihood(model, out)
    if not math.isfinite(E):
        return _Eval(theta, float("inf"), np.zeros(n), np.eye(n), True)
    g = gradient_estimate(model, out, J)
    H = hessian_estimate(model, J)
    return _Eval(theta, E, g, H, False)


def _chol_psd(H: np.ndarray) -> np.ndarray:
    """Cholesky with escalating ridge; falls back to identity scale."""
    n = H.shape[0]
    ridge = 1e-10 * max(np.trace(H), 1.0) / n
    for _ in range(8):
        try:
            return np.linalg.cholesky(H + ridge * np.eye(n))
        except np.linalg.LinAlgError:
            ridge *= 10.0
    return np.eye(n)


def _newton_direction(H: np.ndarray, g: np.ndarray, damping: float) -> np.ndarray:
    n = H.shape[0]
    A = H + damping * np.eye(n)
    try:
        p = np.linalg.solve(A, g)
        if np.all(np.isfinite(p)):
            return p
    except np.linalg.LinAlgError:
        pass
    bump = 1e-10 * max(np.trace(H), 1.0) / n
    return np.linalg.solve(A + bump * np.eye(n), g)


def _sphere_direction(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal(n)
    norm = np.linalg.norm(v)
    while norm == 0.0:  # pragma: no cover
        v = rng.standard_normal(n)
        norm = np.linalg.norm(v)
    return v / norm


def _plmc_log_density(theta_to, ev_from: _Eval, rho: float) -> float:
    """log N(theta_to; theta - rho H^-1 g, 2 rho H^-1) up to the shared
    2 pi constant (which cancels in the ratio)."""
    L = _chol_psd(ev_from.hess)
    mean = ev_from.theta - rho * _solve_chol(L, ev_from.grad)
    diff = theta_to - mean
    quad = diff @ _apply_mass(L, diff) / (2.0 * rho)
    logdet_cov = len(diff) * math.log(2.0 * rho) - 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * quad - 0.5 * logdet_cov


def _solve_chol(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = np.linalg.solve(L, b)
    return np.linalg.solve(L.T, y)


def _apply_mass(L: np.ndarray, x: np.ndarray) -> np.ndarray:
    return L @ (L.T @ x)


def run(
    spec: ProblemSpec,
    dataset: Dataset,
    model: LikelihoodModel,
    config: SolverConfig,
    theta0,
    theta_star=None,
) -> Trace:
    """Run the configured method and return the per-iteration trace.

    Exactly one forward solve is performed per iteration for the current
    candidate (plus one per leapfrog position for PHMC). A run aborts with
    a partial trace after more than MAX_CONSECUTIVE_DIVERGENCES proposals
    in a row evaluate to +inf.
    """
    theta0 = np.asarray(theta0, dtype=float)
    theta_star = None if theta_star is None else np.asarray(theta_star, dtype=float)
    rng = np.random.default_rng(config.seed)
    trace = Trace(method=config.method)

    def rel_err(theta) -> Optional[float]:
        if theta_star is None:
            return None
        return float(np.linalg.norm(theta - theta_star) / np.linalg.norm(theta_star))

    t0 = time.perf_counter()
    ev = _evaluate(spec, model, config, theta0)
    trace.records.append(
        TraceRecord(0, ev.theta.copy(), ev.E, rel_err(ev.theta), None, None,
                    (time.perf_counter() - t0) * 1e3)
    )

    divergence_streak = 1 if ev.diverged else 0
    rho = config.step

    for it in range(1, config.budget + 1):
        t0 = time.perf_counter()
        accepted: Optional[bool] = None
        proposal_E: Optional[float] = None
        forced = False

        if config.method == "RS":
            cand = ev.theta + rho * _sphere_direction(rng, ev.theta.size)
            ev_new = _evaluate(spec, model, config, cand)
            proposal_E = ev_new.E
            accepted = ev_new.E < ev.E
            if accepted:
                ev = ev_new

        elif config.method == "GD":
            cand = ev.theta - rho * ev.grad
            ev_new = _evaluate(spec, model, config, cand)
            # a divergent move would zero the gradient and strand the run,
            # so stay put and let the next iteration retry from here
            if math.isfinite(ev_new.E):
                ev = ev_new

        elif config.method == "NWT":
            direction = _newton_direction(ev.hess, ev.grad, config.newton_damping)
            cand = ev.theta - rho * direction
            ev_new = _evaluate(spec, model, config, cand)
            if math.isfinite(ev_new.E):
                ev = ev_new

        elif config.method == "RWM":
            cand = ev.theta + rho * rng.standard_normal(ev.theta.size)
            ev_new = _evaluate(spec, model, config, cand)
            proposal_E = ev_new.E
            log_u = math.log(rng.uniform())
            accepted = math.isfinite(ev_new.E) and log_u < (ev.E - ev_new.E)
            if accepted:
                ev = ev_new

        elif config.method == "PLMC":
            L = _chol_psd(ev.hess)
            mean = ev.theta - rho * _solve_chol(L, ev.grad)
            noise = np.linalg.solve(L.T, rng.standard_normal(ev.theta.size))
            cand = mean + math.sqrt(2.0 * rho) * noise
            ev_new = _evaluate(spec, model, config, cand)
            proposal_E = ev_new.E
            forced = it <= config.burn_in_force_accept
            if not math.isfinite(ev_new.E):
                accepted = False
            elif forced:
                accepted = True
            else:
                log_ratio = ev.E - ev_new.E
                if config.mh_correction and not ev_new.diverged:
                    log_ratio += _plmc_log_density(ev.theta, ev_new, rho)
                    log_ratio -= _plmc_log_density(cand, ev, rho)
                accepted = math.log(rng.uniform()) < log_ratio
            if accepted:
                ev = ev_new

        elif config.method == "PHMC":
            mass_L = _chol_psd(ev.hess)
            p = _apply_mass_sample(mass_L, rng.standard_normal(ev.theta.size))
            kin0 = 0.5 * p @ _solve_chol(mass_L, p)
            ham0 = ev.E + kin0
            ev_traj = ev
            ok = math.isfinite(ev.E)
            if ok:
                p_half = p - 0.5 * rho * ev_traj.grad
                for leap in range(config.hmc_leapfrog_steps):
                    cand = ev_traj.theta + rho * _solve_chol(mass_L, p_half)
                    ev_traj = _evaluate(spec, model, config, cand)
                    if not math.isfinite(ev_traj.E):
                        ok = False
                        break
                    if leap < config.hmc_leapfrog_steps - 1:
                        p_half = p_half - rho * ev_traj.grad
                if ok:
                    p_final = p_half - 0.5 * rho * ev_traj.grad
                    kin1 = 0.5 * p_final @ _solve_chol(mass_L, p_final)
                    ham1 = ev_traj.E + kin1
            proposal_E = ev_traj.E if ok else float("inf")
            ev_new = ev_traj
            forced = it <= config.burn_in_force_accept
            if not ok:
                accepted = False
            elif forced:
                accepted = True
            else:
                accepted = math.log(rng.uniform()) < (ham0 - ham1)
            if accepted:
                ev = ev_traj

        else:  # pragma: no cover
            raise AssertionError(config.method)

        if ev_new.diverged or not math.isfinite(ev_new.E):
            divergence_streak += 1
        else:
            divergence_streak = 0

        trace.records.append(
            TraceRecord(it, ev.theta.copy(), ev.E, rel_err(ev.theta), accepted,
                        proposal_E, (time.perf_counter() - t0) * 1e3, forced)
        )

        if divergence_streak > MAX_CONSECUTIVE_DIVERGENCES:
            trace.aborted = True
            break

    return trace


def _apply_mass_sample(L: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Sample N(0, H) momenta from a standard normal draw via H = L L'."""
    return L @ z


def default_step_grid() -> np.ndarray:
    """Decade grid 1e-16 ... 1e0 used by the tuning protocol."""
    return 10.0 ** np.arange(-16.0, 1.0)


def sweep_step_size(
    spec: ProblemSpec,
    dataset: Dataset,
    model: LikelihoodModel,
    config: SolverConfig,
    theta0,
    theta_star=None,
    steps=None,
) -> tuple[float, Trace, dict[float, Trace]]:
    """Grid sweep of the step size / proposal width; keeps the run with
    the lowest final E. Returns (best_step, best_trace, all_traces)."""
    steps = default_step_grid() if steps is None else np.asarray(steps, dtype=float)
    traces: dict[float, Trace] = {}
    best_step, best_trace = None, None
    for s in steps:
        tr = run(spec, dataset, model, replace(config, step=float(s)), theta0, theta_star)
        traces[float(s)] = tr
        if best_trace is None or tr.final.E < best_trace.final.E:
            best_step, best_trace = float(s), tr
    return best_step, best_trace, traces
