"""Convergence overlays and likelihood-surface contour pairs from CSVs."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
# identical input must give identical output files: pin the SVG id salt
matplotlib.rcParams["svg.hashsalt"] = "odefilt-plots"

import matplotlib.pyplot as plt
import numpy as np

METRICS = ("E", "rel_err")
TRACE_REQUIRED = ("iter", "E", "rel_err", "accepted", "wall_ms")
SURFACE_COLUMNS = ("theta_a", "theta_b", "E_aware", "E_unaware")
DEFAULT_THINNING = 5  # a marker on every fifth iteration


class SchemaError(ValueError):
    """A CSV does not match the expected odefilt schema."""


def _savefig(fig, output: str) -> None:
    # drop the embedded creation date so equal inputs give equal bytes
    metadata = {"Date": None} if str(output).endswith(".svg") else None
    fig.savefig(output, metadata=metadata)


@dataclass(frozen=True)
class Trace:
    """Parsed trace CSV: iteration index, energies and (optional) rel_err."""

    path: str
    iters: np.ndarray
    E: np.ndarray
    rel_err: np.ndarray | None  # None when the column is empty


@dataclass(frozen=True)
class PlotJob:
    """One convergence figure: overlaid traces, one panel per metric."""

    traces: tuple[str, ...]
    labels: tuple[str, ...]
    output: str
    metrics: tuple[str, ...] = METRICS
    log_E: bool = True
    log_rel_err: bool = True
    thinning: int = DEFAULT_THINNING
    title: str = ""

    def __post_init__(self):
        if len(self.traces) == 0:
            raise ValueError("at least one trace file is required")
        if len(self.labels) != len(self.traces):
            raise ValueError("labels and traces must have equal length")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise ValueError(f"unknown metrics {bad}; choose from {METRICS}")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")


def _float_or_nan(cell: str) -> float:
    return float(cell) if cell != "" else float("nan")


def read_trace(path: str | Path) -> Trace:
    """Parse a trace CSV written by ``odefilt infer``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = rows[0]
    for col in TRACE_REQUIRED:
        if col not in header:
            raise SchemaError(f"{path}: missing required column {col!r}")
    if not any(c.startswith("theta_") for c in header):
        raise SchemaError(f"{path}: missing required column 'theta_*'")
    idx = {c: header.index(c) for c in TRACE_REQUIRED}
    body = rows[1:]
    if not body:
        raise SchemaError(f"{path}: no data rows")
    iters = np.array([int(r[idx["iter"]]) for r in body])
    E = np.array([_float_or_nan(r[idx["E"]]) for r in body])
    rel_cells = [r[idx["rel_err"]] for r in body]
    rel = None if all(c == "" for c in rel_cells) else np.array(
        [_float_or_nan(c) for c in rel_cells]
    )
    return Trace(path=str(path), iters=iters, E=E, rel_err=rel)


def plot_convergence(job: PlotJob) -> str:
    """Render overlaid metric-vs-iteration panels; returns the output path."""
    traces = [read_trace(p) for p in job.traces]

    panels = []
    for metric in job.metrics:
        if metric == "rel_err" and all(t.rel_err is None for t in traces):
            warnings.warn(
                "rel_err column empty in every trace; metric skipped", stacklevel=2
            )
            continue
        panels.append(metric)
    if not panels:
        raise SchemaError("no plottable metric in the given traces")

    fig, axes = plt.subplots(
        1, len(panels), figsize=(5.2 * len(panels), 4.0), squeeze=False
    )
    for ax, metric in zip(axes[0], panels):
        log = job.log_E if metric == "E" else job.log_rel_err
        for trace, label in zip(traces, job.labels):
            y = trace.E if metric == "E" else trace.rel_err
            if y is None:
                warnings.warn(
                    f"{trace.path}: rel_err column empty; series skipped",
                    stacklevel=2,
                )
                continue
            ax.plot(
                trace.iters,
                y,
                label=label,
                marker="o",
                markersize=4,
                markevery=job.thinning,
                linewidth=1.2,
            )
        if log:
            ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("negative log-likelihood E" if metric == "E"
                      else "relative error")
        ax.legend()
    if job.title:
        fig.suptitle(job.title)
    fig.tight_layout()
    _savefig(fig, job.output)
    plt.close(fig)
    return job.output


def read_surface(path: str | Path) -> dict[str, np.ndarray]:
    """Parse a surface CSV from ``odefilt sweep surface`` into a rectangular
    grid: returns axes ``a``, ``b`` and matrices ``E_aware``, ``E_unaware``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != SURFACE_COLUMNS:
        got = tuple(rows[0]) if rows else ()
        raise SchemaError(
            f"{path}: expected header {','.join(SURFACE_COLUMNS)}, got {','.join(got)}"
        )
    body = np.array([[_float_or_nan(c) for c in r] for r in rows[1:]])
    if body.size == 0:
        raise SchemaError(f"{path}: no data rows")
    a = np.unique(body[:, 0])
    b = np.unique(body[:, 1])
    if body.shape[0] != a.size * b.size:
        raise SchemaError(
            f"{path}: non-rectangular grid "
            f"({body.shape[0]} rows, expected {a.size} x {b.size})"
        )
    aware = np.full((b.size, a.size), np.nan)
    unaware = np.full((b.size, a.size), np.nan)
    ia = np.searchsorted(a, body[:, 0])
    ib = np.searchsorted(b, body[:, 1])
    aware[ib, ia] = body[:, 2]
    unaware[ib, ia] = body[:, 3]
    if np.isnan(aware).any() or np.isnan(unaware).any():
        raise SchemaError(f"{path}: non-rectangular grid (duplicate/missing cells)")
    return {"a": a, "b": b, "E_aware": aware, "E_unaware": unaware}


def plot_likelihood_surface(
    path: str | Path,
    output: str,
    truth: tuple[float, float] | None = None,
    levels: int = 12,
    log_levels: bool = True,
) -> str:
    """Render side-by-side aware/unaware contour panels with an optional
    cross marker at the true parameters; returns the output path."""
    grid = read_surface(path)
    A, B = np.meshgrid(grid["a"], grid["b"])
    fig, axes = plt.subplots(1, 2, figsize=(10.4, 4.4), sharey=True)
    for ax, key, title in zip(
        axes, ("E_aware", "E_unaware"), ("uncertainty-aware", "uncertainty-unaware")
    ):
        Z = grid[key]
        if log_levels and np.nanmin(Z) > 0 and np.nanmax(Z) > np.nanmin(Z):
            lev = np.geomspace(np.nanmin(Z), np.nanmax(Z), levels)
        else:
            lev = levels  # constant or non-positive surfaces: let mpl choose
        cs = ax.contourf(A, B, Z, levels=lev)
        fig.colorbar(cs, ax=ax)
        if truth is not None:
            ax.plot(truth[0], truth[1], marker="+", markersize=14,
                    markeredgewidth=2.0, color="red")
        ax.set_title(title)
        ax.set_xlabel("theta_a")
    axes[0].set_ylabel("theta_b")
    fig.tight_layout()
    _savefig(fig, output)
    plt.close(fig)
    return output
