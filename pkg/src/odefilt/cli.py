"""Experiment runner: forward solves, inference runs, Jacobian checks and
step-size / likelihood-surface sweeps, with CSV trace persistence.

Exit codes: 0 ok, 1 usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from odefilt.exceptions import FilterDivergedError
from odefilt.filtering import calibrate_sigma_dif, filter_solve
from odefilt.kernels import KernelConfig
from odefilt.likelihood import (
    build_likelihood_model,
    neg_log_likelihood,
    unaware_neg_log_likelihood,
)
from odefilt.linearization import (
    apply_prefactor,
    jacobian_estimate,
    kernel_prefactor,
    sensitivity_fd,
    true_jacobian_fd,
)
from odefilt.problems import (
    BENCHMARK_NAMES,
    DATA_GENERATORS,
    generate_data,
    get_benchmark,
)
from odefilt.solvers import METHODS, SolverConfig, Trace, run, sweep_step_size

OUTPUT_DIR_ENV = "ODEFILT_OUTPUT_DIR"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


def _fmt(x: float) -> str:
    return f"{x:.17g}"


@dataclass
class ExperimentConfig:
    """Plain key/value configuration of one inference run (JSON on disk;
    see config.schema.json)."""

    benchmark: str
    method: str
    step: float = 1e-2
    budget: int = 100
    seed: int = 0
    data_seed: int = 1234
    data_generator: str = "oracle"
    burn_in: int | None = None
    h: float | None = None
    R: float = 0.0
    sigma_dif: float | str = 1.0
    hmc_leapfrog_steps: int = 5
    newton_damping: float = 0.0
    mh_correction: bool = True
    output: str | None = None
    chains: int = 1
    timing: bool = False

    def __post_init__(self):
        if self.benchmark not in BENCHMARK_NAMES:
            raise ValueError(f"unknown benchmark {self.benchmark!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if isinstance(self.sigma_dif, str) and self.sigma_dif != "calibrate":
            raise ValueError("sigma_dif must be a number or 'calibrate'")
        if self.data_generator not in DATA_GENERATORS:
            raise ValueError(f"unknown data generator {self.data_generator!r}")
        if self.chains < 1:
            raise ValueError("chains must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - fields
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV, "."))


def _resolve_sigma(cfg: ExperimentConfig, benchmark, grid):
    """Fixed value, or the global quasi-ML calibration at theta0."""
    if cfg.sigma_dif == "calibrate":
        provisional = filter_solve(
            benchmark.spec, benchmark.theta0, grid, cfg.R, KernelConfig(1.0)
        )
        return KernelConfig(calibrate_sigma_dif(provisional))
    return KernelConfig(float(cfg.sigma_dif))


def write_trace_csv(trace: Trace, n_params: int, path, timing: bool = False) -> None:
    """CSV schema: iter,theta_0..theta_{n-1},E,rel_err,accepted,wall_ms.

    rel_err is empty when the true parameter is unknown; wall_ms is empty
    unless timing output was requested (it would break byte-level
    reproducibility across reruns of the same seed).
    """
    header = (
        ["iter"]
        + [f"theta_{i}" for i in range(n_params)]
        + ["E", "rel_err", "accepted", "wall_ms"]
    )
    lines = [",".join(header)]
    for rec in trace.records:
        row = [str(rec.index)]
        row += [_fmt(v) for v in rec.theta]
        row.append(_fmt(rec.E))
        row.append("" if rec.rel_err is None else _fmt(rec.rel_err))
        row.append("" if rec.accepted is None else str(int(rec.accepted)))
        row.append(_fmt(rec.wall_ms) if timing else "")
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def _run_single_chain(cfg_dict: dict, chain: int, out_path: str) -> tuple[str, float, bool]:
    """One seeded chain; module-level so ProcessPoolExecutor can pickle it."""
    cfg = ExperimentConfig.from_dict(cfg_dict)
    benchmark = get_benchmark(cfg.benchmark)
    # inference never looks past the last observation, and on stiff
    # problems the post-data tail of the forward solve can blow up
    grid = benchmark.inference_grid(cfg.h)
    kcfg = _resolve_sigma(cfg, benchmark, grid)
    dataset = generate_data(
        benchmark, np.random.default_rng(cfg.data_seed), cfg.data_generator
    )
    model = build_likelihood_model(benchmark.spec, dataset, grid, cfg.R, kcfg)
    burn_in = benchmark.burn_in if cfg.burn_in is None else cfg.burn_in
    solver = SolverConfig(
        method=cfg.method,
        step=cfg.step,
        budget=cfg.budget,
        seed=cfg.seed + chain,
        burn_in_force_accept=burn_in if cfg.method in ("PLMC", "PHMC") else 0,
        hmc_leapfrog_steps=cfg.hmc_leapfrog_steps,
        newton_damping=cfg.newton_damping,
        mh_correction=cfg.mh_correction,
    )
    trace = run(
        benchmark.spec, dataset, model, solver, benchmark.theta0, benchmark.theta_star
    )
    write_trace_csv(trace, benchmark.spec.n_params, out_path, timing=cfg.timing)
    return out_path, trace.final.E, trace.aborted


def cmd_solve(args) -> int:
    benchmark = get_benchmark(args.benchmark)
    theta = (
        benchmark.theta_star
        if args.theta is None
        else np.array([float(v) for v in args.theta.split(",")])
    )
    grid = benchmark.grid(args.h)
    kcfg = KernelConfig(args.sigma_dif)
    try:
        out = filter_solve(benchmark.spec, theta, grid, args.R, kcfg)
    except FilterDivergedError as exc:
        print(f"error: forward solve diverged at step {exc.step}", file=sys.stderr)
        return EXIT_NUMERICAL
    d = benchmark.spec.dim
    header = ["t"] + [f"mean_{i}" for i in range(d)] + ["variance"]
    lines = [",".join(header)]
    for i, t in enumerate(grid.times):
        row = [_fmt(t)] + [_fmt(out.filter_means[j, i]) for j in range(d)]
        row.append(_fmt(out.filter_variances[i]))
        lines.append(",".join(row))
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_infer(args) -> int:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        if not (args.benchmark and args.method):
            print("error: need --config or both --benchmark and --method", file=sys.stderr)
            return EXIT_USAGE
        cfg = ExperimentConfig(benchmark=args.benchmark, method=args.method)
    overrides = {
        "step": args.step, "budget": args.budget, "seed": args.seed,
        "output": args.output, "chains": args.chains, "timing": args.timing or None,
        "data_generator": args.data_generator,
    }
    for key, val in overrides.items():
        if val is not None:
            cfg = dataclasses.replace(cfg, **{key: val})

    out = cfg.output or str(
        _default_output_dir() / f"{cfg.benchmark}_{cfg.method.lower()}.csv"
    )
    jobs = []
    if cfg.chains == 1:
        jobs.append((0, out))
    else:
        stem, suffix = os.path.splitext(out)
        jobs = [(c, f"{stem}_chain{c}{suffix}") for c in range(cfg.chains)]

    aborted_any = False
    results = []
    if len(jobs) == 1:
        results.append(_run_single_chain(cfg.to_dict(), *jobs[0]))
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            futs = [pool.submit(_run_single_chain, cfg.to_dict(), c, p) for c, p in jobs]
            results = [f.result() for f in futs]
    for path, final_e, aborted in results:
        status = "aborted" if aborted else "done"
        print(f"{status}: {path} final E={_fmt(final_e)}", file=sys.stderr)
        aborted_any |= aborted
    return EXIT_NUMERICAL if aborted_any else EXIT_OK


def cmd_jacobian_check(args) -> int:
    benchmark = get_benchmark(args.benchmark)
    theta = (
        benchmark.theta_star
        if args.theta is None
        else np.array([float(v) for v in args.theta.split(",")])
    )
    h = args.h if args.h is not None else benchmark.h
    kcfg = KernelConfig(args.sigma_dif)
    spec = benchmark.spec

    grid = benchmark.grid(h)
    try:
        dm_fd = true_jacobian_fd(spec, theta, grid, args.R, kcfg)
        sens = sensitivity_fd(spec, theta, grid, args.R, kcfg)
        out = filter_solve(spec, theta, grid, args.R, kcfg)
    except (FilterDivergedError, RuntimeError) as exc:
        print(f"error: oracle failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    K = kernel_prefactor(grid, args.R, kcfg)
    ks = apply_prefactor(K, sens.S)
    denom = np.linalg.norm(dm_fd)
    print(f"benchmark={benchmark.label} h={_fmt(h)} theta={list(theta)}")
    print("decomposition check: ||Dm_fd - (J + K S_fd)||_F / ||Dm_fd||_F")
    for variant in ("literal", "drift_corrected"):
        J = jacobian_estimate(K, out, variant).J
        rel = np.linalg.norm(dm_fd - (J + ks)) / denom
        print(f"  variant={variant:16s} rel_error={_fmt(rel)}")

    print("step-halving trend: ||J - Dm_fd||_F (drift_corrected)")
    hh = h
    for _ in range(4):
        g = benchmark.grid(hh)
        try:
            dm = true_jacobian_fd(spec, theta, g, args.R, kcfg)
            o = filter_solve(spec, theta, g, args.R, kcfg)
        except (FilterDivergedError, RuntimeError) as exc:
            print(f"  h={_fmt(hh)} oracle failed: {exc}")
            hh /= 2.0
            continue
        Kh = kernel_prefactor(g, args.R, kcfg)
        J = jacobian_estimate(Kh, o).J
        print(f"  h={_fmt(hh)} error={_fmt(np.linalg.norm(J - dm))}")
        hh /= 2.0
    return EXIT_OK


def cmd_sweep(args) -> int:
    benchmark = get_benchmark(args.benchmark)
    grid = benchmark.inference_grid()
    kcfg = KernelConfig(args.sigma_dif)
    dataset = generate_data(
        benchmark, np.random.default_rng(args.data_seed), args.data_generator
    )
    model = build_likelihood_model(benchmark.spec, dataset, grid, args.R, kcfg)

    if args.mode == "rho":
        if not args.method:
            print("error: sweep rho requires --method", file=sys.stderr)
            return EXIT_USAGE
        base = SolverConfig(
            method=args.method, budget=args.budget, seed=args.seed,
            burn_in_force_accept=benchmark.burn_in if args.method in ("PLMC", "PHMC") else 0,
        )
        best_step, best_trace, traces = sweep_step_size(
            benchmark.spec, dataset, model, base, benchmark.theta0, benchmark.theta_star
        )
        print("step,final_E,final_rel_err")
        for s, tr in traces.items():
            rel = tr.final.rel_err
            print(f"{_fmt(s)},{_fmt(tr.final.E)},{'' if rel is None else _fmt(rel)}")
        print(f"best step: {_fmt(best_step)} (final E={_fmt(best_trace.final.E)})",
              file=sys.stderr)
        if args.output:
            write_trace_csv(best_trace, benchmark.spec.n_params, args.output)
        return EXIT_OK

    # surface mode: rectangular E-grid over two parameter axes
    ia, ib = args.param_a, args.param_b
    base_theta = benchmark.theta_star.copy()
    if args.fixed:
        for pair in args.fixed.split(","):
            idx, val = pair.split("=")
            base_theta[int(idx)] = float(val)
    lo_a, hi_a, n_a = (float(v) for v in args.range_a.split(":"))
    lo_b, hi_b, n_b = (float(v) for v in args.range_b.split(":"))
    axis_a = np.linspace(lo_a, hi_a, int(n_a))
    axis_b = np.linspace(lo_b, hi_b, int(n_b))
    lines = ["theta_a,theta_b,E_aware,E_unaware"]
    for a in axis_a:
        for b in axis_b:
            theta = base_theta.copy()
            theta[ia], theta[ib] = a, b
            try:
                out = filter_solve(benchmark.spec, theta, grid, args.R, kcfg)
                e_aware = neg_log_likelihood(model, out)
                e_unaware = unaware_neg_log_likelihood(dataset, out)
            except FilterDivergedError:
                e_aware = e_unaware = float("inf")
            lines.append(f"{_fmt(a)},{_fmt(b)},{_fmt(e_aware)},{_fmt(e_unaware)}")
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="odefilt", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="forward solve, table of t/mean/variance")
    ps.add_argument("benchmark", choices=BENCHMARK_NAMES)
    ps.add_argument("--theta", help="comma-separated parameter values (default: true)")
    ps.add_argument("--h", type=float, default=None)
    ps.add_argument("--R", type=float, default=0.0)
    ps.add_argument("--sigma-dif", dest="sigma_dif", type=float, default=1.0)
    ps.add_argument("--output")
    ps.set_defaults(func=cmd_solve)

    pi = sub.add_parser("infer", help="run an optimizer/sampler, write a trace CSV")
    pi.add_argument("--config", help="JSON config file (see config.schema.json)")
    pi.add_argument("--benchmark", choices=BENCHMARK_NAMES)
    pi.add_argument("--method", choices=METHODS)
    pi.add_argument("--step", type=float)
    pi.add_argument("--budget", type=int)
    pi.add_argument("--seed", type=int)
    pi.add_argument("--chains", type=int)
    pi.add_argument("--data-generator", dest="data_generator",
                    choices=DATA_GENERATORS)
    pi.add_argument("--timing", action="store_true")
    pi.add_argument("--output")
    pi.set_defaults(func=cmd_infer)

    pj = sub.add_parser("jacobian-check", help="decomposition and trend report")
    pj.add_argument("benchmark", choices=BENCHMARK_NAMES)
    pj.add_argument("--theta")
    pj.add_argument("--h", type=float, default=None)
    pj.add_argument("--R", type=float, default=0.0)
    pj.add_argument("--sigma-dif", dest="sigma_dif", type=float, default=1.0)
    pj.set_defaults(func=cmd_jacobian_check)

    pw = sub.add_parser("sweep", help="step-size grid sweep or likelihood surface")
    pw.add_argument("mode", choices=("rho", "surface"))
    pw.add_argument("--benchmark", required=True, choices=BENCHMARK_NAMES)
    pw.add_argument("--method", choices=METHODS)
    pw.add_argument("--budget", type=int, default=100)
    pw.add_argument("--seed", type=int, default=0)
    pw.add_argument("--data-seed", dest="data_seed", type=int, default=1234)
    pw.add_argument("--data-generator", dest="data_generator",
                    choices=DATA_GENERATORS, default="oracle")
    pw.add_argument("--R", type=float, default=0.0)
    pw.add_argument("--sigma-dif", dest="sigma_dif", type=float, default=1.0)
    pw.add_argument("--param-a", dest="param_a", type=int, default=0)
    pw.add_argument("--param-b", dest="param_b", type=int, default=1)
    pw.add_argument("--fixed", help="index=value pairs, e.g. '2=0.05,3=0.5'")
    pw.add_argument("--range-a", dest="range_a", default="0.5:1.5:11",
                    help="lo:hi:count for the first axis")
    pw.add_argument("--range-b", dest="range_b", default="0.05:0.15:11")
    pw.add_argument("--output")
    pw.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FilterDivergedError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
